//! Ray-cast spherical renderer for analytic scenes.
//!
//! Every pixel casts one ray through its center. The nearest hit supplies a
//! flat-shaded albedo and the exact radial distance, and reprojecting the hit
//! point into a second camera gives exact optical flow.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::alignment::{CameraPose, Frame, FrameSequence};
use crate::disparity::DepthMap;
use crate::error::{Error, Result};
use crate::grid::ErpGrid;
use crate::sphere::{pixel_center_dir, vector_to_erp_pixel, wrap_pixel_offset, Vec3};
use crate::temporal::{FlowField, PairPolicy};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Albedo {
    Solid([f64; 3]),
    /// Two colors alternating on a square grid of `period` meters, laid out
    /// in the surface's own 2D coordinates.
    Checker { a: [f64; 3], b: [f64; 3], period: f64 },
}

impl Albedo {
    fn shade(&self, s: f64, t: f64) -> [f64; 3] {
        match *self {
            Albedo::Solid(c) => c,
            Albedo::Checker { a, b, period } => {
                let parity = ((s / period).floor() as i64 + (t / period).floor() as i64).rem_euclid(2);
                if parity == 0 {
                    a
                } else {
                    b
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Plane { point: Vec3, normal: Vec3, albedo: Albedo },
    Sphere { center: Vec3, radius: f64, albedo: Albedo },
    Box { min: Vec3, max: Vec3, albedo: Albedo },
    /// Shell centered at the world origin, seen from inside.
    Sky { radius: f64, albedo: Albedo },
}

const EPS: f64 = 1e-9;

impl Primitive {
    /// Smallest ray parameter `t > 0` of a hit and the surface coordinates
    /// used for texturing.
    fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<(f64, f64, f64)> {
        match self {
            Primitive::Plane { point, normal, .. } => {
                let n = normal.normalize();
                let denom = d.dot(&n);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let t = (point - o).dot(&n) / denom;
                (t > EPS).then(|| {
                    let (t1, t2) = tangent_basis(&n);
                    let local = o + d * t - point;
                    (t, local.dot(&t1), local.dot(&t2))
                })
            }
            Primitive::Sphere { center, radius, .. } => {
                let t = sphere_hit(o, d, center, *radius, false)?;
                let local = o + d * t - center;
                Some((t, local.z.atan2(local.x) * radius, (local.y / radius).clamp(-1.0, 1.0).acos() * radius))
            }
            Primitive::Sky { radius, .. } => {
                let t = sphere_hit(o, d, &Vec3::zeros(), *radius, true)?;
                let local = o + d * t;
                Some((t, local.z.atan2(local.x) * radius, (local.y / radius).clamp(-1.0, 1.0).acos() * radius))
            }
            Primitive::Box { min, max, .. } => {
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                let mut axis_near = 0;
                let mut axis_far = 0;
                for a in 0..3 {
                    if d[a].abs() < 1e-15 {
                        if o[a] < min[a] || o[a] > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let t0 = (min[a] - o[a]) / d[a];
                    let t1 = (max[a] - o[a]) / d[a];
                    let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
                    if lo > t_near {
                        t_near = lo;
                        axis_near = a;
                    }
                    if hi < t_far {
                        t_far = hi;
                        axis_far = a;
                    }
                }
                if t_near > t_far {
                    return None;
                }
                let (t, axis) = if t_near > EPS {
                    (t_near, axis_near)
                } else if t_far > EPS {
                    (t_far, axis_far)
                } else {
                    return None;
                };
                let hit = o + d * t;
                let (s, u) = match axis {
                    0 => (hit.y, hit.z),
                    1 => (hit.x, hit.z),
                    _ => (hit.x, hit.y),
                };
                Some((t, s, u))
            }
        }
    }

    fn albedo(&self) -> &Albedo {
        match self {
            Primitive::Plane { albedo, .. }
            | Primitive::Sphere { albedo, .. }
            | Primitive::Box { albedo, .. }
            | Primitive::Sky { albedo, .. } => albedo,
        }
    }

    /// Largest distance from the origin of any point the primitive needs to
    /// be inside the sky (planes: distance of the plane to the origin).
    fn extent(&self) -> f64 {
        match self {
            Primitive::Plane { point, normal, .. } => point.dot(&normal.normalize()).abs(),
            Primitive::Sphere { center, radius, .. } => center.norm() + radius,
            Primitive::Box { min, max, .. } => {
                let far = Vec3::new(min.x.abs().max(max.x.abs()), min.y.abs().max(max.y.abs()), min.z.abs().max(max.z.abs()));
                far.norm()
            }
            Primitive::Sky { radius, .. } => *radius,
        }
    }
}

fn tangent_basis(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let t1 = n.cross(&helper).normalize();
    (t1, n.cross(&t1))
}

fn sphere_hit(o: &Vec3, d: &Vec3, c: &Vec3, r: f64, far: bool) -> Option<f64> {
    let oc = o - c;
    let b = oc.dot(d);
    let cc = oc.dot(&oc) - r * r;
    let disc = b * b - cc;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let (t0, t1) = (-b - sq, -b + sq);
    if far {
        return (t1 > EPS).then_some(t1);
    }
    if t0 > EPS {
        Some(t0)
    } else if t1 > EPS {
        Some(t1)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    primitives: Vec<Primitive>,
}

impl Scene {
    /// Requires exactly one sky shell that encloses every other primitive.
    pub fn new(primitives: Vec<Primitive>) -> Result<Self> {
        let skies: Vec<f64> = primitives
            .iter()
            .filter_map(|p| match p {
                Primitive::Sky { radius, .. } => Some(*radius),
                _ => None,
            })
            .collect();
        if skies.len() != 1 {
            return Err(Error::Config(format!("scene needs exactly one sky shell, found {}", skies.len())));
        }
        let sky = skies[0];
        if !(sky > 0.0) {
            return Err(Error::Config(format!("sky radius must be positive, got {sky}")));
        }
        for p in &primitives {
            if !matches!(p, Primitive::Sky { .. }) && !(p.extent() < sky) {
                return Err(Error::Config(format!("primitive {p:?} reaches beyond the sky radius {sky}")));
            }
            match p {
                Primitive::Sphere { radius, .. } if !(*radius > 0.0) => {
                    return Err(Error::Config("sphere radius must be positive".into()))
                }
                Primitive::Box { min, max, .. } if !(min.x < max.x && min.y < max.y && min.z < max.z) => {
                    return Err(Error::Config("box min must be below max on every axis".into()))
                }
                Primitive::Plane { normal, .. } if normal.norm() == 0.0 => {
                    return Err(Error::Config("plane normal must be nonzero".into()))
                }
                _ => {}
            }
            if let Albedo::Checker { period, .. } = p.albedo() {
                if !(*period > 0.0) {
                    return Err(Error::Config("checker period must be positive".into()));
                }
            }
        }
        Ok(Self { primitives })
    }

    pub fn sky_only(radius: f64, color: [f64; 3]) -> Result<Self> {
        Self::new(vec![Primitive::Sky {
            radius,
            albedo: Albedo::Solid(color),
        }])
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }

    pub fn sky_radius(&self) -> f64 {
        self.primitives
            .iter()
            .find_map(|p| match p {
                Primitive::Sky { radius, .. } => Some(*radius),
                _ => None,
            })
            .expect("validated")
    }

    /// Nearest hit along a unit-length ray: distance, primitive index, color.
    pub fn trace(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, usize, [f64; 3])> {
        let mut best: Option<(f64, usize, f64, f64)> = None;
        for (n, p) in self.primitives.iter().enumerate() {
            if let Some((t, s, u)) = p.intersect(origin, dir) {
                if best.is_none_or(|b| t < b.0) {
                    best = Some((t, n, s, u));
                }
            }
        }
        best.map(|(t, n, s, u)| (t, n, self.primitives[n].albedo().shade(s, u)))
    }

    fn check_camera(&self, pose: &CameraPose) -> Result<()> {
        if pose.translation.norm() >= self.sky_radius() {
            return Err(Error::Domain("camera lies outside the sky shell".into()));
        }
        Ok(())
    }
}

/// Renders color (3 channels in `[0, 1]`) and radial depth seen from `pose`.
pub fn render_erp(scene: &Scene, pose: &CameraPose, width: usize, height: usize) -> Result<(ErpGrid, DepthMap)> {
    scene.check_camera(pose)?;
    let rotation = pose.rotation();
    let mut rgb = vec![0.0; width * height * 3];
    let mut depth = vec![0.0; width * height];
    rgb.par_chunks_mut(width * 3)
        .zip(depth.par_chunks_mut(width))
        .enumerate()
        .for_each(|(j, (rgb_row, depth_row))| {
            for i in 0..width {
                let d = rotation.apply(&pixel_center_dir(i, j, width, height).to_vector());
                let (t, _, color) = scene.trace(&pose.translation, &d).expect("sky shell encloses the camera");
                rgb_row[3 * i..3 * i + 3].copy_from_slice(&color);
                depth_row[i] = t;
            }
        });
    Ok((
        ErpGrid::from_vec(width, height, 3, rgb)?,
        DepthMap::new(ErpGrid::from_vec(width, height, 1, depth)?)?,
    ))
}

/// Exact flow at continuous pixel `(u, v)` of the camera at `from`: where the
/// surface point seen there appears in the camera at `to`, minus `(u, v)`.
/// Also returns the index of the primitive hit.
pub fn flow_at(scene: &Scene, from: &CameraPose, to: &CameraPose, u: f64, v: f64, width: usize, height: usize) -> ([f64; 2], usize) {
    let phi = u / width as f64 * 2.0 * PI - PI;
    let theta = v / height as f64 * PI;
    let d = from
        .rotation()
        .apply(&crate::sphere::SphericalDir::new(phi, theta).to_vector());
    let (t, prim, _) = scene.trace(&from.translation, &d).expect("sky shell encloses the camera");
    let x = from.translation + d * t;
    let local = to.rotation().transpose().apply(&(x - to.translation));
    let (u2, v2) = vector_to_erp_pixel(&local, width, height);
    ([wrap_pixel_offset(u2 - u, width), v2 - v], prim)
}

/// Optical flow from the camera at `pose_j` to the camera at `pose_k` for a
/// static scene.
pub fn render_flow(scene: &Scene, pose_j: &CameraPose, pose_k: &CameraPose, width: usize, height: usize) -> Result<FlowField> {
    scene.check_camera(pose_j)?;
    scene.check_camera(pose_k)?;
    if pose_j == pose_k {
        return Ok(FlowField::zeros(width, height));
    }
    let mut data = vec![0.0; width * height * 2];
    data.par_chunks_mut(width * 2).enumerate().for_each(|(j, row)| {
        for i in 0..width {
            let (f, _) = flow_at(scene, pose_j, pose_k, i as f64 + 0.5, j as f64 + 0.5, width, height);
            row[2 * i..2 * i + 2].copy_from_slice(&f);
        }
    });
    FlowField::new(ErpGrid::from_vec(width, height, 2, data)?)
}

/// Equally spaced positions along `+z` starting at `start`, identity rotations.
pub fn linear_trajectory(start: Vec3, frames: usize, spacing: f64) -> Vec<CameraPose> {
    (0..frames)
        .map(|n| CameraPose::at(start + Vec3::new(0.0, 0.0, spacing * n as f64)))
        .collect()
}

pub const GROUND_HEIGHT: f64 = -1.6;
pub const BENCHMARK_SKY_RADIUS: f64 = 60.0;

/// A rendered synthetic sequence with exact ground truth.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub scene: Scene,
    pub poses: Vec<CameraPose>,
    pub frames: Vec<ErpGrid>,
    pub depths: Vec<DepthMap>,
    /// Ground-truth flow for every ordered pair of the default pair policy.
    pub flows: Vec<((usize, usize), FlowField)>,
    /// Spacing between consecutive cameras, meters.
    pub baseline: f64,
}

impl Benchmark {
    pub fn flow(&self, j: usize, k: usize) -> Option<&FlowField> {
        self.flows.iter().find(|(p, _)| *p == (j, k)).map(|(_, f)| f)
    }

    /// Frames with their poses; ground-truth depth is attached as the prior.
    pub fn to_sequence(&self, id: usize) -> Result<FrameSequence> {
        let frames = self
            .frames
            .iter()
            .zip(&self.poses)
            .zip(&self.depths)
            .map(|((image, pose), depth)| Frame {
                image: image.clone(),
                pose: *pose,
                prior_depth: Some(depth.clone()),
                sparse_depth: None,
            })
            .collect();
        FrameSequence::new(id, frames)
    }
}

/// Procedural scene: a checkered ground plane, 2–7 spheres and boxes around
/// the origin, and a solid sky shell.
pub fn random_scene(rng: &mut impl Rng) -> Scene {
    let mut prims = Vec::new();
    let ground = color(rng);
    prims.push(Primitive::Plane {
        point: Vec3::new(0.0, GROUND_HEIGHT, 0.0),
        normal: Vec3::y(),
        albedo: checker(rng, ground, 2.0..3.5),
    });

    let objects = rng.gen_range(2..=7);
    for _ in 0..objects {
        let angle = rng.gen_range(-PI..PI);
        let dist = rng.gen_range(3.0..9.0);
        let (cx, cz) = (dist * angle.cos(), dist * angle.sin());
        let base = color(rng);
        let albedo = if rng.gen_bool(0.7) { checker(rng, base, 0.6..1.4) } else { Albedo::Solid(base) };
        if rng.gen_bool(0.5) {
            let radius = rng.gen_range(0.4..1.2);
            let cy = rng.gen_range(GROUND_HEIGHT + radius..1.2);
            prims.push(Primitive::Sphere {
                center: Vec3::new(cx, cy, cz),
                radius,
                albedo,
            });
        } else {
            let half = Vec3::new(rng.gen_range(0.3..1.0), 0.0, rng.gen_range(0.3..1.0));
            let top = GROUND_HEIGHT + rng.gen_range(0.6..3.0);
            prims.push(Primitive::Box {
                min: Vec3::new(cx - half.x, GROUND_HEIGHT, cz - half.z),
                max: Vec3::new(cx + half.x, top, cz + half.z),
                albedo,
            });
        }
    }
    prims.push(Primitive::Sky {
        radius: BENCHMARK_SKY_RADIUS,
        albedo: Albedo::Solid([0.55, 0.7, 0.9]),
    });
    Scene::new(prims).expect("generated scene is valid")
}

fn color(rng: &mut impl Rng) -> [f64; 3] {
    [rng.gen_range(0.25..0.75), rng.gen_range(0.25..0.75), rng.gen_range(0.25..0.75)]
}

/// Low-contrast checker around `base` with a random period.
fn checker(rng: &mut impl Rng, base: [f64; 3], period: std::ops::Range<f64>) -> Albedo {
    let contrast = rng.gen_range(0.12..0.22);
    Albedo::Checker {
        a: base,
        b: base.map(|c| if c > 0.5 { c - contrast } else { c + contrast }),
        period: rng.gen_range(period),
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Camera spacing for a scene seen from the first pose: 2% of the median
/// depth, capped at 4.5% of the minimum depth.
pub fn benchmark_baseline(depth: &DepthMap) -> f64 {
    let min = depth.values().iter().copied().fold(f64::INFINITY, f64::min);
    (0.02 * median(depth.values())).min(0.045 * min)
}

/// Renders a deterministic synthetic sequence for `seed`: a random scene, a
/// straight trajectory along `+z`, color, depth and flow for each frame.
pub fn make_benchmark_sequence(seed: u64, frames: usize, width: usize, height: usize) -> Result<Benchmark> {
    if frames < 2 {
        return Err(Error::Config(format!("a benchmark needs at least 2 frames, got {frames}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = random_scene(&mut rng);
    let start = Vec3::zeros();
    let (_, first_depth) = render_erp(&scene, &CameraPose::at(start), width, height)?;
    let baseline = benchmark_baseline(&first_depth);
    render_benchmark(scene, linear_trajectory(start, frames, baseline), baseline, width, height)
}

/// Renders color, depth and default-policy flows for an explicit trajectory.
pub fn render_benchmark(scene: Scene, poses: Vec<CameraPose>, baseline: f64, width: usize, height: usize) -> Result<Benchmark> {
    let mut images = Vec::with_capacity(poses.len());
    let mut depths = Vec::with_capacity(poses.len());
    for pose in &poses {
        let (rgb, depth) = render_erp(&scene, pose, width, height)?;
        images.push(rgb);
        depths.push(depth);
    }
    let flows = PairPolicy::default()
        .pairs(poses.len())
        .into_iter()
        .map(|(j, k)| Ok(((j, k), render_flow(&scene, &poses[j], &poses[k], width, height)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Benchmark {
        scene,
        poses,
        frames: images,
        depths,
        flows,
        baseline,
    })
}
