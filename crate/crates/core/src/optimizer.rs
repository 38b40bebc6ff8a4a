//! Test-time refinement of per-frame depth against the summed geometric and
//! temporal losses of a sequence.
//!
//! Depth is parameterized as `init · exp(up(c))`, where `c` is a coarse grid
//! of log-depth corrections (one per `downsample × downsample` block) and
//! `up` is bilinear upsampling that wraps in longitude. With `c = 0` the
//! depth is exactly the initial map.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::alignment::FrameSequence;
use crate::disparity::{distortion_weight, geometric_loss_grad, DepthMap, StereoPair, WeightMode, DEFAULT_MIN_COVERAGE};
use crate::error::{Error, Result};
use crate::grid::ErpGrid;
use crate::temporal::{temporal_loss_grad, FlowField, PairPolicy};

pub const DEFAULT_DEPTH_MIN: f64 = 0.1;
pub const DEFAULT_DEPTH_MAX: f64 = 1e4;
pub const DEFAULT_DOWNSAMPLE: usize = 4;

/// Bilinear taps from a coarse axis of `coarse` samples onto `fine` pixels.
#[derive(Debug, Clone, PartialEq)]
struct AxisTaps(Vec<(usize, usize, f64)>);

impl AxisTaps {
    fn new(fine: usize, coarse: usize, wrap: bool) -> Self {
        let taps = (0..fine)
            .map(|i| {
                let x = (i as f64 + 0.5) * coarse as f64 / fine as f64 - 0.5;
                let x0 = x.floor();
                let t = x - x0;
                let x0 = x0 as i64;
                if wrap {
                    let n = coarse as i64;
                    (x0.rem_euclid(n) as usize, (x0 + 1).rem_euclid(n) as usize, t)
                } else if x0 < 0 {
                    (0, 0, 0.0)
                } else if x0 as usize >= coarse - 1 {
                    (coarse - 1, coarse - 1, 0.0)
                } else {
                    (x0 as usize, x0 as usize + 1, t)
                }
            })
            .collect();
        Self(taps)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Upsampler {
    cols: AxisTaps,
    rows: AxisTaps,
    coarse_w: usize,
    coarse_h: usize,
}

impl Upsampler {
    fn new(width: usize, height: usize, factor: usize) -> Self {
        let coarse_w = width.div_ceil(factor);
        let coarse_h = height.div_ceil(factor);
        Self {
            cols: AxisTaps::new(width, coarse_w, true),
            rows: AxisTaps::new(height, coarse_h, false),
            coarse_w,
            coarse_h,
        }
    }

    fn up(&self, c: &ErpGrid) -> Vec<f64> {
        let cw = self.coarse_w;
        let at = |i: usize, j: usize| c.data()[j * cw + i];
        self.rows
            .0
            .iter()
            .flat_map(|&(j0, j1, ty)| {
                self.cols.0.iter().map(move |&(i0, i1, tx)| {
                    let top = (1.0 - tx) * at(i0, j0) + tx * at(i1, j0);
                    let bottom = (1.0 - tx) * at(i0, j1) + tx * at(i1, j1);
                    (1.0 - ty) * top + ty * bottom
                })
            })
            .collect()
    }

    /// Adjoint of [`Upsampler::up`].
    fn up_transpose(&self, fine: &[f64]) -> ErpGrid {
        let mut c = ErpGrid::new(self.coarse_w, self.coarse_h, 1);
        let cw = self.coarse_w;
        let w = self.cols.0.len();
        let data = c.data_mut();
        for (j, &(j0, j1, ty)) in self.rows.0.iter().enumerate() {
            for (i, &(i0, i1, tx)) in self.cols.0.iter().enumerate() {
                let g = fine[j * w + i];
                if g == 0.0 {
                    continue;
                }
                data[j0 * cw + i0] += (1.0 - ty) * (1.0 - tx) * g;
                data[j0 * cw + i1] += (1.0 - ty) * tx * g;
                data[j1 * cw + i0] += ty * (1.0 - tx) * g;
                data[j1 * cw + i1] += ty * tx * g;
            }
        }
        c
    }
}

/// Optimization variables for every frame of a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthParams {
    base: Vec<DepthMap>,
    coarse: Vec<ErpGrid>,
    upsampler: Upsampler,
    factor: usize,
    bounds: (f64, f64),
}

impl DepthParams {
    /// Starts from `init` with zero corrections. Every initial depth must lie
    /// in `bounds`.
    pub fn new(init: Vec<DepthMap>, downsample: usize, bounds: (f64, f64)) -> Result<Self> {
        let first = init
            .first()
            .ok_or_else(|| Error::Config("no initial depth maps".into()))?;
        let (w, h) = (first.width(), first.height());
        if downsample == 0 {
            return Err(Error::Config("downsample factor must be at least 1".into()));
        }
        if !(bounds.0 > 0.0 && bounds.0 < bounds.1 && bounds.1.is_finite()) {
            return Err(Error::Config(format!("invalid depth bounds {bounds:?}")));
        }
        for (n, d) in init.iter().enumerate() {
            if (d.width(), d.height()) != (w, h) {
                return Err(Error::Shape(format!("initial depth {n} is {}x{}, expected {w}x{h}", d.width(), d.height())));
            }
            if let Some(p) = d.values().iter().position(|v| !(bounds.0..=bounds.1).contains(v)) {
                return Err(Error::Range(format!(
                    "initial depth {n} has {} at pixel ({}, {}), outside [{}, {}]",
                    d.values()[p],
                    p % w,
                    p / w,
                    bounds.0,
                    bounds.1
                )));
            }
        }
        let upsampler = Upsampler::new(w, h, downsample);
        let coarse = vec![ErpGrid::new(upsampler.coarse_w, upsampler.coarse_h, 1); init.len()];
        Ok(Self {
            base: init,
            coarse,
            upsampler,
            factor: downsample,
            bounds,
        })
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn downsample(&self) -> usize {
        self.factor
    }

    /// Coarse log-depth corrections of frame `n`.
    pub fn corrections(&self, n: usize) -> &ErpGrid {
        &self.coarse[n]
    }

    pub fn initial(&self, n: usize) -> &DepthMap {
        &self.base[n]
    }

    /// Full-resolution depth of frame `n`, clamped to the bounds.
    pub fn depth(&self, n: usize) -> DepthMap {
        let base = self.base[n].grid();
        let up = self.upsampler.up(&self.coarse[n]);
        let (lo, hi) = self.bounds;
        let data = base
            .data()
            .iter()
            .zip(&up)
            .map(|(d, c)| (d * c.exp()).clamp(lo, hi))
            .collect();
        DepthMap::new(ErpGrid::from_vec(base.width(), base.height(), 1, data).expect("same raster"))
            .expect("clamped depth is positive and finite")
    }

    pub fn depths(&self) -> Vec<DepthMap> {
        (0..self.len()).map(|n| self.depth(n)).collect()
    }

    fn offset(&self, steps: &[ErpGrid], alpha: f64) -> Self {
        let mut next = self.clone();
        for (c, s) in next.coarse.iter_mut().zip(steps) {
            for (v, d) in c.data_mut().iter_mut().zip(s.data()) {
                *v += alpha * d;
            }
        }
        next
    }
}

/// How the per-epoch parameter step is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateRule {
    /// Sign-based steps with per-parameter adaptive sizes (iRprop−), starting
    /// at `step_size` log units.
    #[default]
    Rprop,
    /// Steepest descent scaled so the largest correction moves `step_size`
    /// log units.
    GradientDescent,
}

impl FromStr for UpdateRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rprop" => Ok(UpdateRule::Rprop),
            "gd" | "gradient_descent" => Ok(UpdateRule::GradientDescent),
            other => Err(Error::Config(format!("unknown update rule `{other}`"))),
        }
    }
}

impl fmt::Display for UpdateRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpdateRule::Rprop => "rprop",
            UpdateRule::GradientDescent => "gd",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeConfig {
    pub epochs: usize,
    /// Initial step in log-depth units.
    pub step_size: f64,
    pub update: UpdateRule,
    /// Step halvings tried per epoch before the step is rejected.
    pub max_halvings: usize,
    pub pair_policy: PairPolicy,
    pub geometric_weight: f64,
    pub temporal_weight: f64,
    pub min_coverage: f64,
    pub weight_mode: WeightMode,
    pub downsample: usize,
    pub depth_min: f64,
    pub depth_max: f64,
    /// Drop a pair's geometric term with a warning instead of failing when
    /// its coverage is too low.
    pub skip_insufficient: bool,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            step_size: 0.05,
            update: UpdateRule::default(),
            max_halvings: 5,
            pair_policy: PairPolicy::default(),
            geometric_weight: 1.0,
            temporal_weight: 1.0,
            min_coverage: DEFAULT_MIN_COVERAGE,
            weight_mode: WeightMode::default(),
            downsample: DEFAULT_DOWNSAMPLE,
            depth_min: DEFAULT_DEPTH_MIN,
            depth_max: DEFAULT_DEPTH_MAX,
            skip_insufficient: false,
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step size must be positive");
        }
        if !(self.geometric_weight >= 0.0 && self.temporal_weight >= 0.0)
            || !(self.geometric_weight.is_finite() && self.temporal_weight.is_finite())
        {
            return bad("loss weights must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.min_coverage) {
            return bad("min coverage must lie in [0, 1]");
        }
        if self.downsample == 0 {
            return bad("downsample factor must be at least 1");
        }
        if !(self.depth_min > 0.0 && self.depth_min < self.depth_max && self.depth_max.is_finite()) {
            return bad("depth bounds must satisfy 0 < min < max < inf");
        }
        Ok(())
    }

    /// Parameters for `init` at this configuration's resolution and bounds.
    pub fn params(&self, init: Vec<DepthMap>) -> Result<DepthParams> {
        DepthParams::new(init, self.downsample, (self.depth_min, self.depth_max))
    }
}

/// One ordered pair's contribution to the combined loss (unweighted terms).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLoss {
    pub source: usize,
    pub target: usize,
    pub baseline: f64,
    pub geometric: f64,
    pub temporal: f64,
    /// The geometric term was dropped for low coverage.
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    /// Weighted sum over pairs.
    pub total: f64,
    /// Unweighted sums over pairs.
    pub geometric: f64,
    pub temporal: f64,
    pub pairs: Vec<PairLoss>,
}

/// Signed camera displacement along `+z` between two frames, in the source
/// camera's coordinates. Fails if the pair is not a rotation-free
/// displacement along `+z`.
pub fn pair_baseline(seq: &FrameSequence, source: usize, target: usize) -> Result<f64> {
    let (a, b) = (&seq.frames()[source].pose, &seq.frames()[target].pose);
    let (ra, rb) = (a.rotation(), b.rotation());
    let rel_rot = ra.transpose().compose(&rb);
    let rot_err = (rel_rot.matrix() - nalgebra::Matrix3::identity()).abs().max();
    let t = ra.transpose().apply(&(b.translation - a.translation));
    let lateral = t.x.hypot(t.y);
    if rot_err > 1e-6 || lateral > 1e-6 * t.norm() {
        return Err(Error::Config(format!(
            "pair ({source}, {target}) is not a pure +z displacement (rotation error {rot_err:.2e}, lateral {lateral:.2e} m); align the sequence first"
        )));
    }
    Ok(t.z)
}

struct Context<'a> {
    seq: &'a FrameSequence,
    cfg: &'a OptimizeConfig,
    pairs: Vec<(usize, usize, f64, Option<&'a FlowField>)>,
    weight: ErpGrid,
}

impl<'a> Context<'a> {
    fn new(seq: &'a FrameSequence, flows: &'a [((usize, usize), FlowField)], cfg: &'a OptimizeConfig) -> Result<Self> {
        cfg.validate()?;
        let list = cfg.pair_policy.pairs(seq.len());
        if list.is_empty() {
            return Err(Error::Config(format!("no frame pairs in a sequence of {} frames", seq.len())));
        }
        let pairs = list
            .into_iter()
            .map(|(j, k)| {
                let flow = if cfg.temporal_weight > 0.0 {
                    let f = flows
                        .iter()
                        .find(|(p, _)| *p == (j, k))
                        .map(|(_, f)| f)
                        .ok_or_else(|| Error::Config(format!("missing flow for pair ({j}, {k})")))?;
                    Some(f)
                } else {
                    None
                };
                Ok((j, k, pair_baseline(seq, j, k)?, flow))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            seq,
            cfg,
            pairs,
            weight: distortion_weight(seq.width(), seq.height(), cfg.weight_mode),
        })
    }

    /// Loss breakdown and, if requested, `dL/dd` per frame.
    fn evaluate(&self, depths: &[DepthMap], with_grad: bool) -> Result<(LossBreakdown, Option<Vec<ErpGrid>>)> {
        let cfg = self.cfg;
        let results: Vec<Result<(PairLoss, Option<ErpGrid>)>> = self
            .pairs
            .par_iter()
            .map(|&(j, k, baseline, flow)| self.evaluate_pair(depths, j, k, baseline, flow, with_grad))
            .collect();

        let (w, h) = (self.seq.width(), self.seq.height());
        let mut grads = with_grad.then(|| vec![ErpGrid::new(w, h, 1); depths.len()]);
        let mut breakdown = LossBreakdown {
            total: 0.0,
            geometric: 0.0,
            temporal: 0.0,
            pairs: Vec::with_capacity(results.len()),
        };
        for r in results {
            let (pl, g) = r?;
            breakdown.geometric += pl.geometric;
            breakdown.temporal += pl.temporal;
            breakdown.total += cfg.geometric_weight * pl.geometric + cfg.temporal_weight * pl.temporal;
            if let (Some(all), Some(g)) = (grads.as_mut(), g) {
                for (a, b) in all[pl.source].data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            breakdown.pairs.push(pl);
        }
        Ok((breakdown, grads))
    }

    fn evaluate_pair(
        &self,
        depths: &[DepthMap],
        j: usize,
        k: usize,
        baseline: f64,
        flow: Option<&FlowField>,
        with_grad: bool,
    ) -> Result<(PairLoss, Option<ErpGrid>)> {
        let cfg = self.cfg;
        let frames = self.seq.frames();
        let depth = &depths[j];
        let mut pl = PairLoss {
            source: j,
            target: k,
            baseline,
            geometric: 0.0,
            temporal: 0.0,
            skipped: false,
        };
        let mut grad = with_grad.then(|| ErpGrid::new(depth.width(), depth.height(), 1));

        if cfg.geometric_weight > 0.0 {
            let pair = StereoPair {
                source: &frames[j].image,
                target: &frames[k].image,
                baseline,
                weight: &self.weight,
                min_coverage: cfg.min_coverage,
            };
            match geometric_loss_grad(depth, &pair) {
                Ok(e) => {
                    pl.geometric = e.loss;
                    if let (Some(acc), Some(g)) = (grad.as_mut(), e.gradient) {
                        accumulate(acc, &g, cfg.geometric_weight);
                    }
                }
                Err(Error::InsufficientOverlap { coverage, min }) if cfg.skip_insufficient => {
                    log::warn!("skipping geometric term of pair ({j}, {k}): coverage {coverage:.3} < {min:.3}");
                    pl.skipped = true;
                }
                Err(e) => return Err(e),
            }
        }
        if let Some(flow) = flow {
            let e = temporal_loss_grad(depth, baseline, flow, &self.weight)?;
            pl.temporal = e.loss;
            if let (Some(acc), Some(g)) = (grad.as_mut(), e.gradient) {
                accumulate(acc, &g, cfg.temporal_weight);
            }
        }

        let total = cfg.geometric_weight * pl.geometric + cfg.temporal_weight * pl.temporal;
        let grad_bad = grad.as_ref().and_then(|g| first_nonfinite(g));
        if !total.is_finite() || grad_bad.is_some() {
            let what = if total.is_finite() { "non-finite gradient" } else { "non-finite loss" };
            let (x, y) = grad_bad
                .or_else(|| first_nonfinite(&frames[j].image))
                .or_else(|| first_nonfinite(&frames[k].image))
                .unwrap_or((0, 0));
            return Err(Error::Numerical {
                source_frame: j,
                target_frame: k,
                x,
                y,
                what: what.into(),
            });
        }
        Ok((pl, grad))
    }
}

fn accumulate(acc: &mut ErpGrid, g: &ErpGrid, weight: f64) {
    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += weight * b;
    }
}

fn first_nonfinite(g: &ErpGrid) -> Option<(usize, usize)> {
    let p = g.data().iter().position(|v| !v.is_finite())? / g.channels();
    Some((p % g.width(), p / g.width()))
}

fn check_params(seq: &FrameSequence, params: &DepthParams) -> Result<()> {
    if params.len() != seq.len() {
        return Err(Error::Shape(format!(
            "{} depth maps for a sequence of {} frames",
            params.len(),
            seq.len()
        )));
    }
    let d = params.initial(0);
    if (d.width(), d.height()) != (seq.width(), seq.height()) {
        return Err(Error::Shape("depth maps and frames differ in size".into()));
    }
    Ok(())
}

/// Weighted sum of geometric and temporal losses over the configured pairs.
///
/// `flows` must hold the flow of every selected pair when the temporal
/// weight is positive. A zero weight skips that term entirely.
pub fn combined_loss(
    seq: &FrameSequence,
    flows: &[((usize, usize), FlowField)],
    params: &DepthParams,
    cfg: &OptimizeConfig,
) -> Result<LossBreakdown> {
    check_params(seq, params)?;
    let ctx = Context::new(seq, flows, cfg)?;
    Ok(ctx.evaluate(&params.depths(), false)?.0)
}

/// Losses after an epoch; epoch 0 is the initial state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub epoch: usize,
    pub geometric: f64,
    pub temporal: f64,
    pub total: f64,
    /// Step scale accepted this epoch (0 when the step was rejected).
    pub step_scale: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub params: DepthParams,
    pub trace: Vec<TraceEntry>,
}

impl OptimizeResult {
    pub fn depths(&self) -> Vec<DepthMap> {
        self.params.depths()
    }
}

/// Per-parameter state of the sign-based update.
struct RpropState {
    steps: Vec<ErpGrid>,
    prev: Vec<ErpGrid>,
}

const RPROP_GROW: f64 = 1.2;
const RPROP_SHRINK: f64 = 0.5;
const RPROP_MIN: f64 = 1e-6;
const RPROP_MAX: f64 = 1.0;

impl RpropState {
    fn new(params: &DepthParams, step: f64) -> Self {
        let steps = params.coarse.iter().map(|c| c.map(|_| step)).collect();
        let prev = params.coarse.iter().map(|c| c.map(|_| 0.0)).collect();
        Self { steps, prev }
    }

    fn direction(&mut self, grads: &[ErpGrid]) -> Vec<ErpGrid> {
        let mut out = Vec::with_capacity(grads.len());
        for ((g, step), prev) in grads.iter().zip(&mut self.steps).zip(&mut self.prev) {
            let mut dir = ErpGrid::new(g.width(), g.height(), 1);
            let it = g
                .data()
                .iter()
                .zip(step.data_mut())
                .zip(prev.data_mut())
                .zip(dir.data_mut());
            for (((&g, s), p), d) in it {
                let agree = g * *p;
                if agree > 0.0 {
                    *s = (*s * RPROP_GROW).min(RPROP_MAX);
                } else if agree < 0.0 {
                    *s = (*s * RPROP_SHRINK).max(RPROP_MIN);
                }
                if agree < 0.0 {
                    *p = 0.0;
                } else {
                    *p = g;
                    *d = -g.signum() * *s;
                    if g == 0.0 {
                        *d = 0.0;
                    }
                }
            }
            out.push(dir);
        }
        out
    }

    fn scale_steps(&mut self, factor: f64) {
        for s in &mut self.steps {
            for v in s.data_mut() {
                *v = (*v * factor).max(RPROP_MIN);
            }
        }
    }

    fn forget(&mut self) {
        for p in &mut self.prev {
            p.data_mut().fill(0.0);
        }
    }
}

fn gradient_direction(grads: &[ErpGrid], step: f64) -> Vec<ErpGrid> {
    let max = grads
        .iter()
        .flat_map(|g| g.data())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    grads
        .iter()
        .map(|g| if max > 0.0 { g.map(|v| -step * v / max) } else { g.map(|_| 0.0) })
        .collect()
}

/// Refines `init` for `cfg.epochs` epochs.
///
/// Each epoch computes the analytic gradient, proposes a step with the
/// configured rule, and halves it up to `max_halvings` times until the total
/// loss decreases; if none does, the epoch keeps the current parameters. The
/// returned trace has `epochs + 1` entries and never increases.
pub fn optimize_sequence(
    seq: &FrameSequence,
    flows: &[((usize, usize), FlowField)],
    init: DepthParams,
    cfg: &OptimizeConfig,
) -> Result<OptimizeResult> {
    check_params(seq, &init)?;
    let ctx = Context::new(seq, flows, cfg)?;
    let mut params = init;
    let (mut current, _) = ctx.evaluate(&params.depths(), false)?;
    let entry = |epoch: usize, b: &LossBreakdown, step_scale: f64| TraceEntry {
        epoch,
        geometric: b.geometric,
        temporal: b.temporal,
        total: b.total,
        step_scale,
    };
    let mut trace = vec![entry(0, &current, 0.0)];
    let mut rprop = RpropState::new(&params, cfg.step_size);

    for epoch in 1..=cfg.epochs {
        let depths = params.depths();
        let (_, grads) = ctx.evaluate(&depths, true)?;
        let grads = grads.expect("gradient requested");
        let coarse_grads: Vec<ErpGrid> = grads
            .iter()
            .zip(&depths)
            .map(|(g, d)| {
                // d(depth)/d(log correction) = depth, except where clamped.
                let chain: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(d.values())
                    .map(|(g, &d)| if d <= cfg.depth_min || d >= cfg.depth_max { 0.0 } else { g * d })
                    .collect();
                params.upsampler.up_transpose(&chain)
            })
            .collect();

        let direction = match cfg.update {
            UpdateRule::Rprop => rprop.direction(&coarse_grads),
            UpdateRule::GradientDescent => gradient_direction(&coarse_grads, cfg.step_size),
        };

        let mut accepted = None;
        for halving in 0..=cfg.max_halvings {
            let alpha = 0.5f64.powi(halving as i32);
            let candidate = params.offset(&direction, alpha);
            let eval = match ctx.evaluate(&candidate.depths(), false) {
                Ok((b, _)) => b,
                Err(e @ Error::Numerical { .. }) => return Err(e),
                Err(e) => {
                    log::debug!("epoch {epoch}: step x{alpha} rejected: {e}");
                    continue;
                }
            };
            if eval.total < current.total {
                accepted = Some((candidate, eval, alpha));
                break;
            }
        }
        match accepted {
            Some((next, eval, alpha)) => {
                if alpha < 1.0 {
                    rprop.scale_steps(alpha);
                }
                params = next;
                current = eval;
                trace.push(entry(epoch, &current, alpha));
            }
            None => {
                rprop.scale_steps(0.5f64.powi(cfg.max_halvings as i32 + 1));
                rprop.forget();
                trace.push(entry(epoch, &current, 0.0));
            }
        }
        log::info!("epoch {epoch}: total {:.6}", current.total);
    }
    Ok(OptimizeResult { params, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize) -> DepthMap {
        DepthMap::new(ErpGrid::from_fn(w, h, 1, |i, j, o| o[0] = 2.0 + 0.1 * i as f64 + 0.05 * j as f64)).unwrap()
    }

    #[test]
    fn zero_corrections_reproduce_init() {
        for factor in [1, 3, 4, 7] {
            let d = ramp(20, 10);
            let p = DepthParams::new(vec![d.clone()], factor, (0.1, 1e4)).unwrap();
            assert_eq!(p.depth(0), d);
        }
    }

    #[test]
    fn unit_factor_upsampling_is_identity() {
        let up = Upsampler::new(12, 6, 1);
        let c = ErpGrid::from_fn(12, 6, 1, |i, j, o| o[0] = (i * 7 + j) as f64);
        assert_eq!(up.up(&c), c.data());
    }

    #[test]
    fn constant_coarse_upsamples_to_constant() {
        let up = Upsampler::new(17, 9, 4);
        let c = ErpGrid::filled(up.coarse_w, up.coarse_h, 1, 0.3);
        assert!(up.up(&c).iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    proptest! {
        #[test]
        fn transpose_is_adjoint(
            seed in prop::collection::vec(-1.0f64..1.0, 5 * 3),
            fine in prop::collection::vec(-1.0f64..1.0, 18 * 10),
        ) {
            let up = Upsampler::new(18, 10, 4);
            prop_assert_eq!((up.coarse_w, up.coarse_h), (5, 3));
            let c = ErpGrid::from_vec(5, 3, 1, seed).unwrap();
            let lhs: f64 = up.up(&c).iter().zip(&fine).map(|(a, b)| a * b).sum();
            let t = up.up_transpose(&fine);
            let rhs: f64 = t.data().iter().zip(c.data()).map(|(a, b)| a * b).sum();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn init_outside_bounds_rejected() {
        let d = DepthMap::filled(4, 2, 0.05).unwrap();
        assert!(DepthParams::new(vec![d], 1, (0.1, 1e4)).is_err());
    }

    #[test]
    fn corrections_are_clamped() {
        let d = DepthMap::filled(8, 4, 5.0).unwrap();
        let p = DepthParams::new(vec![d], 2, (0.1, 10.0)).unwrap();
        let dir = vec![ErpGrid::filled(4, 2, 1, 100.0)];
        let big = p.offset(&dir, 1.0);
        assert!(big.depth(0).values().iter().all(|&v| v == 10.0));
        let small = p.offset(&dir, -1.0);
        assert!(small.depth(0).values().iter().all(|&v| v == 0.1));
    }

    #[test]
    fn config_validation() {
        assert!(OptimizeConfig::default().validate().is_ok());
        let bad = [
            OptimizeConfig { step_size: 0.0, ..Default::default() },
            OptimizeConfig { downsample: 0, ..Default::default() },
            OptimizeConfig { temporal_weight: -1.0, ..Default::default() },
            OptimizeConfig { depth_min: 0.0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
        assert_eq!("gd".parse::<UpdateRule>().unwrap(), UpdateRule::GradientDescent);
        assert!("adam".parse::<UpdateRule>().is_err());
    }

    #[test]
    fn rprop_grows_and_shrinks() {
        let d = DepthMap::filled(2, 1, 1.0).unwrap();
        let p = DepthParams::new(vec![d], 1, (0.1, 10.0)).unwrap();
        let mut s = RpropState::new(&p, 0.1);
        let g = |a: f64, b: f64| vec![ErpGrid::from_vec(2, 1, 1, vec![a, b]).unwrap()];
        let d1 = s.direction(&g(1.0, -1.0));
        assert_eq!(d1[0].data(), &[-0.1, 0.1]);
        let d2 = s.direction(&g(2.0, 1.0));
        assert!((d2[0].data()[0] + 0.12).abs() < 1e-15);
        // Sign flip: step shrinks and this parameter waits one epoch.
        assert_eq!(d2[0].data()[1], 0.0);
        let d3 = s.direction(&g(1.0, 1.0));
        assert!((d3[0].data()[1] + 0.05).abs() < 1e-15);
    }
}
