//! Flow-based warping and temporal consistency losses.
//!
//! Two forms of the temporal term are provided:
//!
//! * [`temporal_loss_photometric`] compares a flow-warped frame with the
//!   target frame. It does not depend on depth and is reported for
//!   diagnostics.
//! * [`temporal_loss_displacement`] compares the pixel displacement implied by
//!   depth and baseline with the optical flow. This is the form that
//!   constrains depth and the one the optimizer consumes.

use rayon::prelude::*;

use crate::disparity::{check_coverage, landing_pixel, project, splat, DepthMap, LossValue, WarpResult};
use crate::error::{Error, Result};
use crate::grid::ErpGrid;
use crate::sphere::wrap_pixel_offset;

/// Which ordered frame pairs receive consistency losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairPolicy {
    /// `(j, j+1)` and `(j+1, j)`.
    Consecutive,
    /// Consecutive pairs for short-term consistency plus the first/last pair
    /// in both directions for long-term consistency.
    #[default]
    ConsecutiveAndEnds,
    /// Every ordered pair.
    All,
}

impl PairPolicy {
    pub fn pairs(self, frames: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        match self {
            PairPolicy::All => {
                for j in 0..frames {
                    for k in 0..frames {
                        if j != k {
                            out.push((j, k));
                        }
                    }
                }
            }
            PairPolicy::Consecutive | PairPolicy::ConsecutiveAndEnds => {
                for j in 0..frames.saturating_sub(1) {
                    out.push((j, j + 1));
                    out.push((j + 1, j));
                }
                if self == PairPolicy::ConsecutiveAndEnds && frames > 2 {
                    out.push((0, frames - 1));
                    out.push((frames - 1, 0));
                }
            }
        }
        out
    }
}

impl std::str::FromStr for PairPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "consecutive" => Ok(PairPolicy::Consecutive),
            "consecutive_and_ends" => Ok(PairPolicy::ConsecutiveAndEnds),
            "all" => Ok(PairPolicy::All),
            other => Err(Error::Config(format!("unknown pair policy `{other}`"))),
        }
    }
}

/// Optical flow from frame `j` to frame `k` in pixels, `(du, dv)` per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField(ErpGrid);

impl FlowField {
    pub fn new(grid: ErpGrid) -> Result<Self> {
        grid.ensure_channels(2, "flow field")?;
        grid.validate_finite()?;
        let (w, h) = (grid.width() as f64, grid.height() as f64);
        if let Some(index) = grid
            .data()
            .chunks(2)
            .position(|f| f[0].abs() > w || f[1].abs() > h)
        {
            return Err(Error::Domain(format!(
                "flow at pixel {index} exceeds the raster size {w}x{h}"
            )));
        }
        Ok(Self(grid))
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self(ErpGrid::new(width, height, 2))
    }

    pub fn grid(&self) -> &ErpGrid {
        &self.0
    }

    pub fn into_grid(self) -> ErpGrid {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }
}

/// Forward-splats `source` along the flow. Each pixel lands in the target
/// pixel containing `p + f(p)` (longitude wraps, rows outside the raster are
/// dropped); collisions keep the smaller flow magnitude, then the lower
/// source index.
pub fn flow_warp(source: &ErpGrid, flow: &FlowField) -> Result<WarpResult> {
    source.ensure_raster(flow.grid(), "frame vs flow")?;
    let (w, h) = (source.width(), source.height());
    let landings: Vec<Option<(usize, f64)>> = flow
        .grid()
        .data()
        .chunks(2)
        .enumerate()
        .map(|(p, f)| {
            let u = (p % w) as f64 + 0.5 + f[0];
            let v = (p / w) as f64 + 0.5 + f[1];
            if v >= h as f64 {
                return None;
            }
            landing_pixel(u, v, w, h).map(|q| (q, f[0].hypot(f[1])))
        })
        .collect();
    Ok(splat(source, &landings, false))
}

/// Mean over covered pixels of `‖k̃(p) − k(p)‖₂`.
pub fn temporal_loss_photometric(k_tilde: &WarpResult, k: &ErpGrid, min_coverage: f64) -> Result<LossValue> {
    k_tilde.image.ensure_raster(k, "warped vs target frame")?;
    if k_tilde.image.channels() != k.channels() {
        return Err(Error::Shape("warped and target frames differ in channels".into()));
    }
    let coverage = k_tilde.coverage_fraction();
    check_coverage(coverage, min_coverage)?;
    let ch = k.channels();
    let mut sum = 0.0;
    let mut count = 0usize;
    for q in 0..k.len_pixels() {
        if k_tilde.winner(q).is_some() {
            let a = &k_tilde.image.data()[q * ch..(q + 1) * ch];
            let b = &k.data()[q * ch..(q + 1) * ch];
            sum += a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            count += 1;
        }
    }
    Ok(LossValue {
        loss: sum / count as f64,
        coverage,
    })
}

#[derive(Debug, Clone)]
pub struct TemporalEval {
    pub loss: f64,
    pub gradient: Option<ErpGrid>,
}

/// `Σ_p M(p)·‖δ_px(p) − f(p)‖₂ / N`, where `δ_px` is the source-to-target
/// pixel displacement predicted by `depth` and a camera shift of `baseline`
/// along `+z`, and `N` the pixel count.
pub fn temporal_loss_displacement(depth: &DepthMap, baseline: f64, flow: &FlowField, weight: &ErpGrid) -> Result<f64> {
    Ok(evaluate(depth, baseline, flow, weight, false)?.loss)
}

/// Analytic gradient of [`temporal_loss_displacement`] with respect to each
/// depth value.
pub fn temporal_loss_grad(depth: &DepthMap, baseline: f64, flow: &FlowField, weight: &ErpGrid) -> Result<TemporalEval> {
    evaluate(depth, baseline, flow, weight, true)
}

fn evaluate(depth: &DepthMap, baseline: f64, flow: &FlowField, weight: &ErpGrid, with_grad: bool) -> Result<TemporalEval> {
    depth.grid().ensure_raster(flow.grid(), "depth vs flow")?;
    depth.grid().ensure_raster(weight, "depth vs weight")?;
    let (w, h) = (depth.width(), depth.height());
    let rows: Vec<Result<Vec<(f64, f64)>>> = (0..h)
        .into_par_iter()
        .map(|j| {
            (0..w)
                .map(|i| {
                    let p = j * w + i;
                    let pr = project(i, j, depth.at(i, j), baseline, w, h)
                        .ok_or(Error::DegenerateGeometry { x: i, y: j })?;
                    let f = &flow.grid().data()[2 * p..2 * p + 2];
                    let m = weight.data()[p];
                    let eu = wrap_pixel_offset(pr.du - f[0], w);
                    let ev = pr.dv - f[1];
                    let norm = eu.hypot(ev);
                    let grad = if norm > 0.0 && m != 0.0 {
                        m * (eu * pr.du_dr + ev * pr.dv_dr) / norm
                    } else {
                        0.0
                    };
                    Ok((m * norm, grad))
                })
                .collect()
        })
        .collect();

    let n = (w * h) as f64;
    let mut loss = 0.0;
    let mut gradient = with_grad.then(|| ErpGrid::new(w, h, 1));
    let mut p = 0;
    for row in rows {
        for (term, grad) in row? {
            loss += term;
            if let Some(g) = gradient.as_mut() {
                g.data_mut()[p] = grad / n;
            }
            p += 1;
        }
    }
    Ok(TemporalEval { loss: loss / n, gradient })
}
