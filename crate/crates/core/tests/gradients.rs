//! Analytic depth gradients against central finite differences on random
//! smooth scenes.

use std::f64::consts::PI;

use omnidepth::disparity::{
    distortion_weight, geometric_loss_grad, geometric_objective, DepthMap, StereoPair, WeightMode,
};
use omnidepth::temporal::{temporal_loss_displacement, temporal_loss_grad, FlowField};
use omnidepth::ErpGrid;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const W: usize = 64;
const H: usize = 32;

/// Sum of a few random low-frequency waves over the sphere.
fn smooth_field(rng: &mut ChaCha8Rng, channels: usize, offset: f64, amplitude: f64) -> ErpGrid {
    let waves: Vec<(f64, f64, f64, f64)> = (0..channels * 3)
        .map(|_| {
            (
                rng.gen_range(1..4) as f64,
                rng.gen_range(1..4) as f64,
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(0.3..1.0),
            )
        })
        .collect();
    ErpGrid::from_fn(W, H, channels, |i, j, out| {
        let phi = (i as f64 + 0.5) / W as f64 * 2.0 * PI;
        let theta = (j as f64 + 0.5) / H as f64 * PI;
        for (c, o) in out.iter_mut().enumerate() {
            let s: f64 = waves[3 * c..3 * c + 3]
                .iter()
                .map(|&(a, b, p, w)| w * (a * phi + p).sin() * (b * theta).cos())
                .sum();
            *o = offset + amplitude * s / 3.0;
        }
    })
}

struct SmoothScene {
    depth: DepthMap,
    source: ErpGrid,
    target: ErpGrid,
    flow: FlowField,
    baseline: f64,
}

fn smooth_scene(seed: u64) -> SmoothScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SmoothScene {
        depth: DepthMap::new(smooth_field(&mut rng, 1, 3.0, 1.5)).unwrap(),
        source: smooth_field(&mut rng, 3, 0.5, 0.4),
        target: smooth_field(&mut rng, 3, 0.5, 0.4),
        flow: FlowField::new(smooth_field(&mut rng, 2, 0.0, 2.0)).unwrap(),
        baseline: rng.gen_range(0.05..0.3),
    }
}

/// Landing position and target range of pixel `(i, j)` at depth `r`.
fn land(i: usize, j: usize, r: f64, b: f64) -> (f64, f64, f64) {
    let phi = (i as f64 + 0.5) / W as f64 * 2.0 * PI - PI;
    let theta = (j as f64 + 0.5) / H as f64 * PI;
    let p = [r * theta.sin() * phi.cos(), r * theta.cos(), r * theta.sin() * phi.sin() - b];
    let phi_t = p[2].atan2(p[0]);
    let theta_t = p[0].hypot(p[2]).atan2(p[1]);
    let u = (phi_t + PI) / (2.0 * PI) * W as f64;
    let v = theta_t / PI * H as f64;
    (u, v, (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
}

fn cell(u: f64, v: f64) -> usize {
    let x = (u.floor() as i64).rem_euclid(W as i64) as usize;
    let y = (v.floor() as usize).min(H - 1);
    y * W + x
}

fn sample_cell(u: f64, v: f64) -> (i64, i64) {
    ((u - 0.5).floor() as i64, (v - 0.5).floor() as i64)
}

/// True if moving pixel `p` to depths `r ± h` keeps its splat cell, its
/// z-buffer outcome and the bilinear cell it samples unchanged.
fn geometric_stable(depth: &DepthMap, b: f64, p: usize, h: f64) -> Option<bool> {
    let landings: Vec<(usize, f64)> = (0..W * H)
        .map(|q| {
            let (u, v, range) = land(q % W, q / W, depth.values()[q], b);
            (cell(u, v), range)
        })
        .collect();
    let (i, j) = (p % W, p / W);
    let r = depth.values()[p];
    let outcome = |r: f64| {
        let (u, v, range) = land(i, j, r, b);
        let c = cell(u, v);
        // Lower range wins; ties go to the lower index.
        let wins = landings
            .iter()
            .enumerate()
            .filter(|&(q, &(cq, _))| q != p && cq == c)
            .all(|(q, &(_, rq))| range < rq || (range == rq && p < q));
        (c, wins, sample_cell(u, v))
    };
    let (mid, lo, hi) = (outcome(r), outcome(r - h), outcome(r + h));
    (mid == lo && mid == hi).then_some(mid.1)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn geometric_gradient_matches_finite_differences(seed in any::<u64>()) {
        let s = smooth_scene(seed);
        let weight = distortion_weight(W, H, WeightMode::Paper);
        let pair = StereoPair { source: &s.source, target: &s.target, baseline: s.baseline, weight: &weight, min_coverage: 0.1 };
        let grad = geometric_loss_grad(&s.depth, &pair).unwrap().gradient.unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let (mut checked, mut tries) = (0, 0);
        while checked < 20 && tries < 2000 {
            tries += 1;
            let p = rng.gen_range(0..W * H);
            let r = s.depth.values()[p];
            let h = 1e-3 * r;
            if geometric_stable(&s.depth, s.baseline, p, h) != Some(true) {
                continue;
            }
            let at = |d: f64| {
                let mut g = s.depth.grid().clone();
                g.data_mut()[p] = d;
                geometric_objective(&DepthMap::new(g).unwrap(), &pair).unwrap().loss
            };
            let fd = (at(r + h) - at(r - h)) / (2.0 * h);
            // Where the stencil's truncation error is itself near the
            // tolerance (tiny gradients at the poles) the reference is not
            // trustworthy at this step.
            let fd_half = (at(r + h / 2.0) - at(r - h / 2.0)) / h;
            if rel_err(fd, fd_half) > 2.5e-4 {
                continue;
            }
            let an = grad.data()[p];
            prop_assert!(rel_err(an, fd) < 1e-3, "pixel {p}: analytic {an} vs fd {fd}");
            checked += 1;
        }
        prop_assert!(checked == 20, "only {checked} stable pixels in {tries} tries");
    }

    #[test]
    fn temporal_gradient_matches_finite_differences(seed in any::<u64>()) {
        let s = smooth_scene(seed);
        let weight = distortion_weight(W, H, WeightMode::Paper);
        let grad = temporal_loss_grad(&s.depth, s.baseline, &s.flow, &weight).unwrap().gradient.unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf10);
        for _ in 0..20 {
            let p = rng.gen_range(0..W * H);
            let r = s.depth.values()[p];
            let h = 1e-3 * r;
            let at = |d: f64| {
                let mut g = s.depth.grid().clone();
                g.data_mut()[p] = d;
                temporal_loss_displacement(&DepthMap::new(g).unwrap(), s.baseline, &s.flow, &weight).unwrap()
            };
            let fd = (at(r + h) - at(r - h)) / (2.0 * h);
            let an = grad.data()[p];
            prop_assert!(rel_err(an, fd) < 1e-3, "pixel {p}: analytic {an} vs fd {fd}");
        }
    }
}

#[test]
fn losing_pixels_have_zero_gradient() {
    let s = smooth_scene(17);
    let weight = distortion_weight(W, H, WeightMode::PolarOnly);
    let pair = StereoPair {
        source: &s.source,
        target: &s.target,
        baseline: s.baseline,
        weight: &weight,
        min_coverage: 0.1,
    };
    let grad = geometric_loss_grad(&s.depth, &pair).unwrap().gradient.unwrap();
    let mut losers = 0;
    for p in 0..W * H {
        if geometric_stable(&s.depth, s.baseline, p, 1e-6) == Some(false) {
            assert_eq!(grad.data()[p], 0.0);
            losers += 1;
        }
    }
    assert!(losers > 0);
}
