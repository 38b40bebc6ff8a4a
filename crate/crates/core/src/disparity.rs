//! Spherical stereo disparity for a camera pair displaced along `+z`, depth
//! based view synthesis, and the distortion-weighted geometric loss.
//!
//! A source pixel with direction `d` and radial distance `r` sees the point
//! `P = r·d`. The target camera sits at `(0, 0, b)`, so it sees `P' = P − b·ẑ`
//! at direction `(phi', theta')`. The disparity is `(phi − phi', theta − theta')`
//! and the source pixel lands at `(phi', theta')` in the target image.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::ErpGrid;
use crate::sphere::{pixel_center_dir, wrap_angle_diff, wrap_longitude, wrap_pixel_offset, Vec3};

/// Radial distances in meters, one channel, strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap(ErpGrid);

impl DepthMap {
    pub fn new(grid: ErpGrid) -> Result<Self> {
        grid.ensure_channels(1, "depth map")?;
        if let Some(index) = grid.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if let Some(index) = grid.data().iter().position(|&v| v <= 0.0) {
            return Err(Error::Domain(format!(
                "depth must be positive, got {} at sample {index}",
                grid.data()[index]
            )));
        }
        Ok(Self(grid))
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(ErpGrid::filled(width, height, 1, value))
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

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.0.data()[j * self.0.width() + i]
    }

    pub fn values(&self) -> &[f64] {
        self.0.data()
    }
}

/// Angular disparity `(phi_source − phi_target, theta_source − theta_target)`
/// in radians, two channels, longitude part wrapped to `(−π, π]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityField(ErpGrid);

impl DisparityField {
    pub fn grid(&self) -> &ErpGrid {
        &self.0
    }

    /// Pixel displacement from source to target, `(Δu, Δv)`, i.e. the flow a
    /// static scene induces: `−δ_phi·W/2π` (wrapped) and `−δ_theta·H/π`.
    pub fn to_pixel_displacement(&self) -> ErpGrid {
        let (w, h) = (self.0.width(), self.0.height());
        let mut out = ErpGrid::new(w, h, 2);
        for (dst, src) in out.data_mut().chunks_mut(2).zip(self.0.data().chunks(2)) {
            dst[0] = wrap_pixel_offset(-src[0] * w as f64 / (2.0 * PI), w);
            dst[1] = -src[1] * h as f64 / PI;
        }
        out
    }
}

/// Projection of one source pixel into the target camera.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Projection {
    /// Target-frame continuous pixel coordinates.
    pub u: f64,
    pub v: f64,
    /// Displacement from the source pixel center, horizontal part wrapped.
    pub du: f64,
    pub dv: f64,
    /// Derivatives of `(u, v)` with respect to the source radial distance.
    pub du_dr: f64,
    pub dv_dr: f64,
    /// Radial distance of the point from the target camera.
    pub range: f64,
    /// Source-minus-target angles.
    pub dphi: f64,
    pub dtheta: f64,
}

/// Projects pixel `(i, j)` at radial distance `r` into a camera translated by
/// `b` along `+z`. `None` when the point coincides with the target center.
#[inline]
pub(crate) fn project(i: usize, j: usize, r: f64, b: f64, width: usize, height: usize) -> Option<Projection> {
    let sd = pixel_center_dir(i, j, width, height);
    let (w, h) = (width as f64, height as f64);
    let u0 = i as f64 + 0.5;
    let v0 = j as f64 + 0.5;
    if b == 0.0 {
        return Some(Projection {
            u: u0,
            v: v0,
            du: 0.0,
            dv: 0.0,
            du_dr: 0.0,
            dv_dr: 0.0,
            range: r,
            dphi: 0.0,
            dtheta: 0.0,
        });
    }
    let d = sd.to_vector();
    let p = Vec3::new(r * d.x, r * d.y, r * d.z - b);
    let range = p.norm();
    if !range.is_finite() || range <= 1e-12 * r.max(b.abs()) {
        return None;
    }
    let rho2 = p.x * p.x + p.z * p.z;
    let rho = rho2.sqrt();
    let phi_t = wrap_longitude(p.z.atan2(p.x));
    let theta_t = rho.atan2(p.y);

    let (dphi_dr, dtheta_dr) = if rho > 0.0 {
        let dphi = (p.x * d.z - p.z * d.x) / rho2;
        let drho = (p.x * d.x + p.z * d.z) / rho;
        let dtheta = (p.y * drho - rho * d.y) / (range * range);
        (dphi, dtheta)
    } else {
        (0.0, 0.0)
    };

    let u = (phi_t + PI) / (2.0 * PI) * w;
    let v = theta_t / PI * h;
    Some(Projection {
        u,
        v,
        du: wrap_pixel_offset(u - u0, width),
        dv: v - v0,
        du_dr: dphi_dr * w / (2.0 * PI),
        dv_dr: dtheta_dr * h / PI,
        range,
        dphi: wrap_angle_diff(sd.phi - phi_t),
        dtheta: sd.theta - theta_t,
    })
}

fn project_all(depth: &DepthMap, b: f64) -> Result<Vec<Projection>> {
    let (w, h) = (depth.width(), depth.height());
    let rows: Vec<Result<Vec<Projection>>> = (0..h)
        .into_par_iter()
        .map(|j| {
            (0..w)
                .map(|i| project(i, j, depth.at(i, j), b, w, h).ok_or(Error::DegenerateGeometry { x: i, y: j }))
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(w * h);
    for row in rows {
        out.extend(row?);
    }
    Ok(out)
}

pub fn spherical_disparity(depth: &DepthMap, baseline: f64) -> Result<DisparityField> {
    if !(baseline >= 0.0) {
        return Err(Error::Domain(format!("baseline must be non-negative, got {baseline}")));
    }
    signed_disparity(depth, baseline)
}

/// Like [`spherical_disparity`] but accepts a negative baseline (target camera
/// behind the source along `z`).
pub fn signed_disparity(depth: &DepthMap, baseline: f64) -> Result<DisparityField> {
    let proj = project_all(depth, baseline)?;
    let mut grid = ErpGrid::new(depth.width(), depth.height(), 2);
    for (dst, p) in grid.data_mut().chunks_mut(2).zip(&proj) {
        dst[0] = p.dphi;
        dst[1] = p.dtheta;
    }
    Ok(DisparityField(grid))
}

/// A forward-splatted image with its hole mask and depth buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    pub image: ErpGrid,
    /// 1 where at least one source pixel landed, 0 in holes.
    pub coverage: ErpGrid,
    /// Winning target-frame radial distance per covered pixel, 0 in holes.
    pub zbuffer: ErpGrid,
    winners: Vec<Option<usize>>,
}

impl WarpResult {
    pub fn coverage_fraction(&self) -> f64 {
        let covered = self.winners.iter().filter(|w| w.is_some()).count();
        covered as f64 / self.winners.len() as f64
    }

    /// Source pixel index whose sample was written to target pixel `q`.
    pub fn winner(&self, q: usize) -> Option<usize> {
        self.winners[q]
    }
}

/// Nearest-pixel forward splat. `landings[p]` is the destination pixel and
/// priority of source pixel `p`; lower priority wins, ties go to the lower
/// source index.
pub(crate) fn splat(source: &ErpGrid, landings: &[Option<(usize, f64)>], depth_buffer: bool) -> WarpResult {
    let (w, h, ch) = (source.width(), source.height(), source.channels());
    let n = w * h;
    let mut winners: Vec<Option<usize>> = vec![None; n];
    let mut best = vec![f64::INFINITY; n];
    for (p, landing) in landings.iter().enumerate() {
        if let Some((q, priority)) = *landing {
            if priority < best[q] {
                best[q] = priority;
                winners[q] = Some(p);
            }
        }
    }
    let mut image = ErpGrid::new(w, h, ch);
    let mut coverage = ErpGrid::new(w, h, 1);
    let mut zbuffer = ErpGrid::new(w, h, 1);
    for (q, winner) in winners.iter().enumerate() {
        if let Some(p) = *winner {
            image.data_mut()[q * ch..(q + 1) * ch].copy_from_slice(&source.data()[p * ch..(p + 1) * ch]);
            coverage.data_mut()[q] = 1.0;
            if depth_buffer {
                zbuffer.data_mut()[q] = best[q];
            }
        }
    }
    WarpResult {
        image,
        coverage,
        zbuffer,
        winners,
    }
}

/// Destination pixel containing continuous coordinates `(u, v)`.
#[inline]
pub(crate) fn landing_pixel(u: f64, v: f64, width: usize, height: usize) -> Option<usize> {
    if !(v >= 0.0 && v <= height as f64) || !u.is_finite() {
        return None;
    }
    let x = (u.floor() as i64).rem_euclid(width as i64) as usize;
    let y = (v.floor() as usize).min(height - 1);
    Some(y * width + x)
}

fn depth_landings(proj: &[Projection], width: usize, height: usize) -> Vec<Option<(usize, f64)>> {
    proj.iter()
        .map(|p| landing_pixel(p.u, p.v, width, height).map(|q| (q, p.range)))
        .collect()
}

/// Synthesizes the target view from `source` and its depth (the source pixels
/// are pushed to where the target camera sees them). Collisions keep the
/// point closest to the target camera.
pub fn reproject_frame(source: &ErpGrid, depth: &DepthMap, baseline: f64) -> Result<WarpResult> {
    source.ensure_raster(depth.grid(), "source frame vs depth")?;
    let proj = project_all(depth, baseline)?;
    Ok(splat(source, &depth_landings(&proj, source.width(), source.height()), true))
}

/// Per-pixel weighting of the geometric loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightMode {
    /// `|sin(phi)|·|sin(theta)|`.
    #[default]
    Paper,
    /// `|sin(theta)|` only.
    PolarOnly,
}

impl std::str::FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(WeightMode::Paper),
            "polar_only" => Ok(WeightMode::PolarOnly),
            other => Err(Error::Config(format!("unknown weight mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for WeightMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WeightMode::Paper => "paper",
            WeightMode::PolarOnly => "polar_only",
        })
    }
}

pub fn distortion_weight(width: usize, height: usize, mode: WeightMode) -> ErpGrid {
    ErpGrid::from_fn(width, height, 1, |i, j, out| {
        let d = pixel_center_dir(i, j, width, height);
        out[0] = match mode {
            WeightMode::Paper => d.phi.sin().abs() * d.theta.sin().abs(),
            WeightMode::PolarOnly => d.theta.sin().abs(),
        };
    })
}

/// Weight value at an arbitrary continuous pixel position; pole rows give 0.
pub fn weight_at(u: f64, v: f64, width: usize, height: usize, mode: WeightMode) -> f64 {
    let phi = u / width as f64 * 2.0 * PI - PI;
    let theta = v / height as f64 * PI;
    match mode {
        WeightMode::Paper => phi.sin().abs() * theta.sin().abs(),
        WeightMode::PolarOnly => theta.sin().abs(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub coverage: f64,
}

pub const DEFAULT_MIN_COVERAGE: f64 = 0.10;

const MAX_CHANNELS: usize = 4;

pub(crate) fn check_coverage(coverage: f64, min: f64) -> Result<()> {
    if coverage < min {
        Err(Error::InsufficientOverlap { coverage, min })
    } else {
        Ok(())
    }
}

/// Mean over covered pixels of `‖M·k̂ − M·k‖₂` (norm over channels).
pub fn geometric_loss(k_hat: &WarpResult, k: &ErpGrid, weight: &ErpGrid, min_coverage: f64) -> Result<LossValue> {
    k_hat.image.ensure_raster(k, "synthesized vs target frame")?;
    k.ensure_raster(weight, "target frame vs weight")?;
    if k_hat.image.channels() != k.channels() {
        return Err(Error::Shape("synthesized and target frames differ in channels".into()));
    }
    let coverage = k_hat.coverage_fraction();
    check_coverage(coverage, min_coverage)?;
    let ch = k.channels();
    let (sum, count) = k_hat
        .winners
        .iter()
        .enumerate()
        .filter(|(_, w)| w.is_some())
        .fold((0.0, 0usize), |(sum, count), (q, _)| {
            let m = weight.data()[q];
            let a = &k_hat.image.data()[q * ch..(q + 1) * ch];
            let b = &k.data()[q * ch..(q + 1) * ch];
            let norm = a.iter().zip(b).map(|(x, y)| (m * x - m * y).powi(2)).sum::<f64>().sqrt();
            (sum + norm, count + 1)
        });
    Ok(LossValue {
        loss: sum / count as f64,
        coverage,
    })
}

/// Inputs of the depth-differentiable geometric objective for one ordered pair.
#[derive(Debug, Clone, Copy)]
pub struct StereoPair<'a> {
    pub source: &'a ErpGrid,
    pub target: &'a ErpGrid,
    /// Signed displacement of the target camera along `+z`, meters.
    pub baseline: f64,
    pub weight: &'a ErpGrid,
    pub min_coverage: f64,
}

impl StereoPair<'_> {
    fn check(&self, depth: &DepthMap) -> Result<()> {
        self.source.ensure_raster(depth.grid(), "source frame vs depth")?;
        self.source.ensure_raster(self.target, "source vs target frame")?;
        self.source.ensure_raster(self.weight, "source frame vs weight")?;
        if self.source.channels() != self.target.channels() {
            return Err(Error::Shape("source and target frames differ in channels".into()));
        }
        Ok(())
    }
}

/// Geometric objective and its gradient with respect to every source depth.
#[derive(Debug, Clone)]
pub struct GeometricEval {
    pub loss: f64,
    pub coverage: f64,
    pub gradient: Option<ErpGrid>,
}

/// The geometric loss evaluated as a smooth function of source depth.
///
/// Pixels are splatted exactly as in [`reproject_frame`]; for each covered
/// target pixel `q` with winning source pixel `p`, the target frame is read at
/// the sub-pixel landing position of `p` instead of at the center of `q`:
///
/// ```text
/// L = (1/N_cov) · Σ_q M(q)·‖j(p) − k(u'_p, v'_p)‖₂
/// ```
///
/// This removes the half-pixel rounding of the splat, so small depth changes
/// move the residual continuously.
pub fn geometric_objective(depth: &DepthMap, pair: &StereoPair<'_>) -> Result<LossValue> {
    let e = evaluate_geometric(depth, pair, false)?;
    Ok(LossValue {
        loss: e.loss,
        coverage: e.coverage,
    })
}

/// Analytic gradient of [`geometric_objective`] with respect to each depth
/// value. Source pixels that win no target pixel get 0.
pub fn geometric_loss_grad(depth: &DepthMap, pair: &StereoPair<'_>) -> Result<GeometricEval> {
    evaluate_geometric(depth, pair, true)
}

fn evaluate_geometric(depth: &DepthMap, pair: &StereoPair<'_>, with_grad: bool) -> Result<GeometricEval> {
    pair.check(depth)?;
    if pair.source.channels() > MAX_CHANNELS {
        return Err(Error::Shape(format!("at most {MAX_CHANNELS} channels supported")));
    }
    let (w, h, ch) = (pair.source.width(), pair.source.height(), pair.source.channels());
    let proj = project_all(depth, pair.baseline)?;
    let landings = depth_landings(&proj, w, h);
    let warp = splat(pair.source, &landings, true);
    let coverage = warp.coverage_fraction();
    check_coverage(coverage, pair.min_coverage)?;

    // Per target pixel: (loss term, d term / d r_p).
    let terms: Vec<Option<(usize, f64, f64)>> = warp
        .winners
        .par_iter()
        .enumerate()
        .map(|(q, winner)| {
            let p = (*winner)?;
            let m = pair.weight.data()[q];
            let pr = &proj[p];
            let mut buf = [0.0; 4 * MAX_CHANNELS];
            let (val, rest) = buf.split_at_mut(MAX_CHANNELS);
            let (gu, rest) = rest.split_at_mut(MAX_CHANNELS);
            let (gv, res) = rest.split_at_mut(MAX_CHANNELS);
            let (val, gu, gv, res) = (&mut val[..ch], &mut gu[..ch], &mut gv[..ch], &mut res[..ch]);
            pair.target.sample_with_gradient(pr.u, pr.v, val, gu, gv);
            let src = &pair.source.data()[p * ch..(p + 1) * ch];
            for c in 0..ch {
                res[c] = src[c] - val[c];
            }
            let norm = res.iter().map(|x| x * x).sum::<f64>().sqrt();
            let term = m * norm;
            let grad = if norm > 0.0 && m != 0.0 {
                // d res / d r = −(∂k/∂u·du/dr + ∂k/∂v·dv/dr)
                let dot: f64 = (0..ch).map(|c| res[c] * -(gu[c] * pr.du_dr + gv[c] * pr.dv_dr)).sum();
                m * dot / norm
            } else {
                0.0
            };
            Some((p, term, grad))
        })
        .collect();

    let count = terms.iter().filter(|t| t.is_some()).count() as f64;
    let mut loss = 0.0;
    let mut gradient = with_grad.then(|| ErpGrid::new(w, h, 1));
    for (p, term, grad) in terms.into_iter().flatten() {
        loss += term;
        if let Some(g) = gradient.as_mut() {
            g.data_mut()[p] += grad / count;
        }
    }
    Ok(GeometricEval {
        loss: loss / count,
        coverage,
        gradient,
    })
}
