//! Spherical coordinate conventions and resampling between projections.
//!
//! Directions use longitude `phi ∈ [−π, π)` and colatitude `theta ∈ [0, π]`
//! with the poles on the `y` axis:
//!
//! ```text
//! d(phi, theta) = (sin(theta)·cos(phi), cos(theta), sin(theta)·sin(phi))
//! ```
//!
//! An equirectangular (ERP) raster of `W×H` pixels maps continuous pixel
//! coordinates `(u, v)` to `phi = 2π·u/W − π` and `theta = π·v/H`, so row 0 is
//! the north (`+y`) pole edge and the image center looks along `+x`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{CubemapGrid, ErpGrid, Face};

pub type Vec3 = Vector3<f64>;

/// A unit direction in (longitude, colatitude) form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalDir {
    pub phi: f64,
    pub theta: f64,
}

impl SphericalDir {
    pub fn new(phi: f64, theta: f64) -> Self {
        Self { phi, theta }
    }

    pub fn to_vector(self) -> Vec3 {
        let (sp, cp) = self.phi.sin_cos();
        let (st, ct) = self.theta.sin_cos();
        Vec3::new(st * cp, ct, st * sp)
    }

    /// Direction of any nonzero vector. The longitude is wrapped into `[−π, π)`.
    pub fn from_vector(v: &Vec3) -> Self {
        let rho = v.x.hypot(v.z);
        let theta = rho.atan2(v.y);
        Self {
            phi: wrap_longitude(v.z.atan2(v.x)),
            theta,
        }
    }
}

/// Wraps an angle into `[−π, π)`.
pub fn wrap_longitude(phi: f64) -> f64 {
    let mut w = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        w -= 2.0 * PI;
    }
    w
}

/// Wraps an angle difference into `(−π, π]`.
pub fn wrap_angle_diff(d: f64) -> f64 {
    let w = wrap_longitude(d);
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Wraps a horizontal pixel offset into `(−W/2, W/2]`.
pub fn wrap_pixel_offset(du: f64, width: usize) -> f64 {
    let w = width as f64;
    let mut x = (du + w / 2.0).rem_euclid(w) - w / 2.0;
    if x <= -w / 2.0 {
        x += w;
    }
    x
}

pub fn erp_pixel_to_dir(u: f64, v: f64, width: usize, height: usize) -> Result<SphericalDir> {
    let (w, h) = (width as f64, height as f64);
    if !(0.0..=w).contains(&u) || !(0.0..=h).contains(&v) {
        return Err(Error::Range(format!(
            "pixel ({u}, {v}) outside [0, {w}]x[0, {h}]"
        )));
    }
    Ok(SphericalDir {
        phi: u / w * 2.0 * PI - PI,
        theta: v / h * PI,
    })
}

/// Unchecked mapping for in-range pixel centers.
#[inline]
pub(crate) fn pixel_center_dir(i: usize, j: usize, width: usize, height: usize) -> SphericalDir {
    SphericalDir {
        phi: (i as f64 + 0.5) / width as f64 * 2.0 * PI - PI,
        theta: (j as f64 + 0.5) / height as f64 * PI,
    }
}

pub fn dir_to_erp_pixel(d: SphericalDir, width: usize, height: usize) -> (f64, f64) {
    let phi = wrap_longitude(d.phi);
    (
        (phi + PI) / (2.0 * PI) * width as f64,
        d.theta / PI * height as f64,
    )
}

#[inline]
pub fn vector_to_erp_pixel(v: &Vec3, width: usize, height: usize) -> (f64, f64) {
    dir_to_erp_pixel(SphericalDir::from_vector(v), width, height)
}

/// A proper rotation (orthonormal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    const TOL: f64 = 1e-9;

    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let err = (m.transpose() * m - Matrix3::identity()).abs().max();
        if !m.iter().all(|v| v.is_finite()) || err > Self::TOL || (m.determinant() - 1.0).abs() > Self::TOL {
            return Err(Error::Domain(format!(
                "matrix is not a proper rotation (orthonormality error {err:.3e}, det {:.6})",
                m.determinant()
            )));
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Right-handed rotation about the `y` (polar) axis.
    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn about_axis(axis: &Vec3, angle: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(*axis);
        Self(*nalgebra::Rotation3::from_axis_angle(&axis, angle).matrix())
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>) -> Self {
        Self(*q.to_rotation_matrix().matrix())
    }

    pub fn to_quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.0)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn compose(&self, rhs: &RotationMatrix) -> Self {
        Self(self.0 * rhs.0)
    }

    #[inline]
    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }
}

/// Resamples a spherical image as seen by a camera rotated by `rotation`.
///
/// Content seen along direction `d` in the input appears along `R·d` in the
/// output: `out(p) = in(Rᵀ·d(p))`.
pub fn rotate_erp(grid: &ErpGrid, rotation: &RotationMatrix) -> ErpGrid {
    let (w, h, ch) = (grid.width(), grid.height(), grid.channels());
    let inv = rotation.transpose();
    let mut data = vec![0.0; w * h * ch];
    data.par_chunks_mut(w * ch).enumerate().for_each(|(j, row)| {
        for i in 0..w {
            let d = pixel_center_dir(i, j, w, h).to_vector();
            let (u, v) = vector_to_erp_pixel(&inv.apply(&d), w, h);
            grid.sample_into(u, v, &mut row[i * ch..(i + 1) * ch]);
        }
    });
    ErpGrid::from_vec(w, h, ch, data).expect("shape preserved")
}

/// Orientation of one cube face: viewing axis, image-right and image-down
/// directions, with `right × down = normal`.
#[derive(Debug, Clone, Copy)]
pub struct FaceFrame {
    pub normal: [f64; 3],
    pub right: [f64; 3],
    pub down: [f64; 3],
}

/// Face orientation table shared by reprojection and padding.
///
/// The four side faces keep `−y` as image-down and continue longitude
/// left-to-right (`+x → +z → −x → −z`). The top face has `+x` below it and the
/// bottom face has `+x` above it; both use `+z` as image-right.
pub const FACE_FRAMES: [FaceFrame; 6] = [
    // +x
    FaceFrame { normal: [1.0, 0.0, 0.0], right: [0.0, 0.0, 1.0], down: [0.0, -1.0, 0.0] },
    // -x
    FaceFrame { normal: [-1.0, 0.0, 0.0], right: [0.0, 0.0, -1.0], down: [0.0, -1.0, 0.0] },
    // +y
    FaceFrame { normal: [0.0, 1.0, 0.0], right: [0.0, 0.0, 1.0], down: [1.0, 0.0, 0.0] },
    // -y
    FaceFrame { normal: [0.0, -1.0, 0.0], right: [0.0, 0.0, 1.0], down: [-1.0, 0.0, 0.0] },
    // +z
    FaceFrame { normal: [0.0, 0.0, 1.0], right: [-1.0, 0.0, 0.0], down: [0.0, -1.0, 0.0] },
    // -z
    FaceFrame { normal: [0.0, 0.0, -1.0], right: [1.0, 0.0, 0.0], down: [0.0, -1.0, 0.0] },
];

impl FaceFrame {
    pub fn of(face: Face) -> &'static FaceFrame {
        &FACE_FRAMES[face.index()]
    }

    pub fn normal(&self) -> Vec3 {
        Vec3::from(self.normal)
    }

    pub fn right(&self) -> Vec3 {
        Vec3::from(self.right)
    }

    pub fn down(&self) -> Vec3 {
        Vec3::from(self.down)
    }
}

/// Direction through continuous face-pixel coordinates `(x, y)` (pixel
/// centers at `i + 0.5`), not normalized.
pub fn face_pixel_ray(face: Face, x: f64, y: f64, face_size: usize) -> Vec3 {
    let f = FaceFrame::of(face);
    let n = face_size as f64;
    let a = 2.0 * x / n - 1.0;
    let b = 2.0 * y / n - 1.0;
    f.normal() + f.right() * a + f.down() * b
}

/// Face hit by direction `d` and the in-plane coordinates `(a, b) ∈ [−1, 1]²`
/// along the face's right and down axes.
pub fn dir_to_face(d: &Vec3) -> (Face, f64, f64) {
    let (ax, ay, az) = (d.x.abs(), d.y.abs(), d.z.abs());
    let face = if ax >= ay && ax >= az {
        if d.x >= 0.0 { Face::PosX } else { Face::NegX }
    } else if ay >= az {
        if d.y >= 0.0 { Face::PosY } else { Face::NegY }
    } else if d.z >= 0.0 {
        Face::PosZ
    } else {
        Face::NegZ
    };
    let f = FaceFrame::of(face);
    let depth = d.dot(&f.normal());
    (face, d.dot(&f.right()) / depth, d.dot(&f.down()) / depth)
}

pub fn erp_to_cubemap(grid: &ErpGrid, face_size: usize) -> Result<CubemapGrid> {
    if face_size < 2 {
        return Err(Error::Domain(format!("face size must be at least 2, got {face_size}")));
    }
    let (w, h, ch) = (grid.width(), grid.height(), grid.channels());
    let faces = Face::ALL
        .par_iter()
        .map(|&face| {
            let mut data = vec![0.0; face_size * face_size * ch];
            for j in 0..face_size {
                for i in 0..face_size {
                    let ray = face_pixel_ray(face, i as f64 + 0.5, j as f64 + 0.5, face_size);
                    let (u, v) = vector_to_erp_pixel(&ray, w, h);
                    let at = (j * face_size + i) * ch;
                    grid.sample_into(u, v, &mut data[at..at + ch]);
                }
            }
            data
        })
        .collect();
    CubemapGrid::from_faces(face_size, ch, faces)
}

pub fn cubemap_to_erp(cm: &CubemapGrid, width: usize, height: usize) -> ErpGrid {
    let ch = cm.channels();
    let n = cm.face_size();
    // One ring of padding lets interpolation cross face seams.
    let padded = spherical_pad(cm, 1.min(n - 1)).expect("pad < face size");
    let pad = (padded.face_size() - n) / 2;
    let mut data = vec![0.0; width * height * ch];
    data.par_chunks_mut(width * ch).enumerate().for_each(|(j, row)| {
        for i in 0..width {
            let d = pixel_center_dir(i, j, width, height).to_vector();
            let (face, a, b) = dir_to_face(&d);
            let x = (a + 1.0) * 0.5 * n as f64 + pad as f64;
            let y = (b + 1.0) * 0.5 * n as f64 + pad as f64;
            sample_face_clamped(&padded, face, x, y, &mut row[i * ch..(i + 1) * ch]);
        }
    });
    ErpGrid::from_vec(width, height, ch, data).expect("shape preserved")
}

fn sample_face_clamped(cm: &CubemapGrid, face: Face, x: f64, y: f64, out: &mut [f64]) {
    let n = cm.face_size();
    let last = (n - 1) as f64;
    let xs = (x - 0.5).clamp(0.0, last);
    let ys = (y - 0.5).clamp(0.0, last);
    let x0 = xs.floor() as usize;
    let y0 = ys.floor() as usize;
    let fx = xs - x0 as f64;
    let fy = ys - y0 as f64;
    let x1 = (x0 + 1).min(n - 1);
    let y1 = (y0 + 1).min(n - 1);
    for (c, o) in out.iter_mut().enumerate() {
        let a = cm.get(face, x0, y0, c);
        let b = cm.get(face, x1, y0, c);
        let cc = cm.get(face, x0, y1, c);
        let d = cm.get(face, x1, y1, c);
        *o = (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * cc + fx * d);
    }
}

/// A side of a face raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    Left,
    Right,
    Top,
    Bottom,
}

impl Edge {
    pub const ALL: [Edge; 4] = [Edge::Left, Edge::Right, Edge::Top, Edge::Bottom];

    fn outward(self, f: &FaceFrame) -> Vec3 {
        match self {
            Edge::Left => -f.right(),
            Edge::Right => f.right(),
            Edge::Top => -f.down(),
            Edge::Bottom => f.down(),
        }
    }

    /// Direction of increasing pixel index along the edge.
    fn tangent(self, f: &FaceFrame) -> Vec3 {
        match self {
            Edge::Left | Edge::Right => f.down(),
            Edge::Top | Edge::Bottom => f.right(),
        }
    }
}

/// Where the strip beyond one face edge comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeLink {
    pub neighbor: Face,
    pub neighbor_edge: Edge,
    /// Along-edge index runs opposite on the neighbor.
    pub reversed: bool,
}

/// Adjacency of all 24 face edges, derived from [`FACE_FRAMES`].
pub fn edge_links() -> [[EdgeLink; 4]; 6] {
    let mut table = [[EdgeLink {
        neighbor: Face::PosX,
        neighbor_edge: Edge::Left,
        reversed: false,
    }; 4]; 6];
    for face in Face::ALL {
        let f = FaceFrame::of(face);
        for (e, edge) in Edge::ALL.into_iter().enumerate() {
            let out = edge.outward(f);
            let neighbor = Face::ALL
                .into_iter()
                .find(|g| FaceFrame::of(*g).normal().dot(&out) > 0.5)
                .expect("every edge has a neighbor");
            let g = FaceFrame::of(neighbor);
            let neighbor_edge = Edge::ALL
                .into_iter()
                .find(|ne| ne.outward(g).dot(&f.normal()) > 0.5)
                .expect("neighbor shares the edge");
            let reversed = edge.tangent(f).dot(&neighbor_edge.tangent(g)) < 0.0;
            table[face.index()][e] = EdgeLink {
                neighbor,
                neighbor_edge,
                reversed,
            };
        }
    }
    table
}

/// Pads every face with `pad` pixels of content unfolded from the adjacent
/// faces. The strip `k` pixels beyond an edge copies the neighbor's line `k`
/// pixels inside the shared edge; corner blocks average their two adjacent
/// strips. The interior is copied unchanged.
pub fn spherical_pad(cm: &CubemapGrid, pad: usize) -> Result<CubemapGrid> {
    let n = cm.face_size();
    if pad >= n {
        return Err(Error::Domain(format!("pad {pad} must be smaller than face size {n}")));
    }
    let ch = cm.channels();
    let size = n + 2 * pad;
    let links = edge_links();
    let mut out = CubemapGrid::new(size, ch);
    let mut tmp = vec![0.0; ch];
    let mut tmp2 = vec![0.0; ch];
    for face in Face::ALL {
        for y in 0..size {
            for x in 0..size {
                let fx = x as i64 - pad as i64;
                let fy = y as i64 - pad as i64;
                let inside_x = (0..n as i64).contains(&fx);
                let inside_y = (0..n as i64).contains(&fy);
                match (inside_x, inside_y) {
                    (true, true) => {
                        for c in 0..ch {
                            out.set(face, x, y, c, cm.get(face, fx as usize, fy as usize, c));
                        }
                    }
                    (false, false) => {
                        let cx = fx.clamp(0, n as i64 - 1);
                        let cy = fy.clamp(0, n as i64 - 1);
                        strip_sample(cm, &links, face, cx, fy, &mut tmp);
                        strip_sample(cm, &links, face, fx, cy, &mut tmp2);
                        for c in 0..ch {
                            out.set(face, x, y, c, 0.5 * (tmp[c] + tmp2[c]));
                        }
                    }
                    _ => {
                        strip_sample(cm, &links, face, fx, fy, &mut tmp);
                        for c in 0..ch {
                            out.set(face, x, y, c, tmp[c]);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Value of the face-relative pixel `(fx, fy)` lying outside the face in
/// exactly one axis.
fn strip_sample(cm: &CubemapGrid, links: &[[EdgeLink; 4]; 6], face: Face, fx: i64, fy: i64, out: &mut [f64]) {
    let n = cm.face_size() as i64;
    let (edge, along, depth) = if fx < 0 {
        (Edge::Left, fy, -fx - 1)
    } else if fx >= n {
        (Edge::Right, fy, fx - n)
    } else if fy < 0 {
        (Edge::Top, fx, -fy - 1)
    } else {
        (Edge::Bottom, fx, fy - n)
    };
    let e = Edge::ALL.iter().position(|&x| x == edge).unwrap();
    let link = links[face.index()][e];
    let m = if link.reversed { n - 1 - along } else { along };
    let (sx, sy) = match link.neighbor_edge {
        Edge::Left => (depth, m),
        Edge::Right => (n - 1 - depth, m),
        Edge::Top => (m, depth),
        Edge::Bottom => (m, n - 1 - depth),
    };
    for (c, o) in out.iter_mut().enumerate() {
        *o = cm.get(link.neighbor, sx as usize, sy as usize, c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn smooth(w: usize, h: usize) -> ErpGrid {
        ErpGrid::from_fn(w, h, 1, |i, j, out| {
            let d = pixel_center_dir(i, j, w, h).to_vector();
            out[0] = 0.5 + 0.2 * d.x - 0.15 * d.y + 0.1 * d.z * d.x;
        })
    }

    #[test]
    fn image_center_looks_along_plus_x() {
        let d = erp_pixel_to_dir(256.0, 128.0, 512, 256).unwrap();
        assert_abs_diff_eq!(d.phi, 0.0);
        assert_abs_diff_eq!(d.theta, PI / 2.0);
        let v = d.to_vector();
        assert_abs_diff_eq!(v.x, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.y, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.z, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn top_row_is_north_pole() {
        for u in [0.0, 17.3, 512.0] {
            let v = erp_pixel_to_dir(u, 0.0, 512, 256).unwrap().to_vector();
            assert_abs_diff_eq!(v.y, 1.0);
            assert_abs_diff_eq!(v.x.hypot(v.z), 0.0);
        }
    }

    #[test]
    fn three_quarter_width_looks_along_plus_z() {
        let v = erp_pixel_to_dir(384.0, 128.0, 512, 256).unwrap().to_vector();
        assert_abs_diff_eq!(v.z, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.x, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn out_of_range_pixel_is_an_error() {
        assert!(matches!(erp_pixel_to_dir(-0.1, 3.0, 8, 4), Err(Error::Range(_))));
        assert!(matches!(erp_pixel_to_dir(1.0, 4.5, 8, 4), Err(Error::Range(_))));
    }

    #[test]
    fn minus_z_maps_to_quarter_width() {
        let (u, v) = vector_to_erp_pixel(&Vec3::new(0.0, 0.0, -1.0), 512, 256);
        assert_abs_diff_eq!(u, 128.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 128.0, epsilon = 1e-12);
        let (u, v) = vector_to_erp_pixel(&Vec3::new(1.0, 0.0, 0.0), 512, 256);
        assert_eq!((u, v), (256.0, 128.0));
    }

    #[test]
    fn longitude_pi_wraps_to_minus_pi() {
        assert_eq!(wrap_longitude(PI), -PI);
        assert_eq!(wrap_angle_diff(-PI), PI);
        assert_abs_diff_eq!(wrap_pixel_offset(300.0, 512), -212.0);
        assert_abs_diff_eq!(wrap_pixel_offset(-256.0, 512), 256.0);
    }

    proptest! {
        #[test]
        fn pixel_direction_round_trip(u in 0.0f64..512.0, v in 0.01f64..255.99) {
            let d = erp_pixel_to_dir(u, v, 512, 256).unwrap();
            let (u2, v2) = vector_to_erp_pixel(&d.to_vector(), 512, 256);
            prop_assert!((u - u2).abs() < 1e-9 || (u - u2).abs() > 512.0 - 1e-9);
            prop_assert!((v - v2).abs() < 1e-9);
        }

        #[test]
        fn unit_length(phi in -PI..PI, theta in 0.0f64..PI) {
            prop_assert!((SphericalDir::new(phi, theta).to_vector().norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_matrix_validation() {
        assert!(RotationMatrix::new(Matrix3::identity() * 2.0).is_err());
        assert!(RotationMatrix::new(-Matrix3::<f64>::identity()).is_err());
        assert!(RotationMatrix::new(*RotationMatrix::about_y(0.3).matrix()).is_ok());
    }

    #[test]
    fn identity_rotation_is_bit_exact() {
        let g = smooth(64, 32);
        assert_eq!(rotate_erp(&g, &RotationMatrix::identity()), g);
    }

    #[test]
    fn quarter_turn_about_pole_shifts_columns() {
        let g = ErpGrid::from_fn(64, 32, 2, |i, j, out| {
            out[0] = (i * 31 + j * 7) as f64;
            out[1] = j as f64;
        });
        let r = rotate_erp(&g, &RotationMatrix::about_y(PI / 2.0));
        for j in 0..32 {
            for i in 0..64 {
                assert_eq!(r.pixel(i, j), g.pixel((i + 16) % 64, j), "pixel ({i},{j})");
            }
        }
    }

    #[test]
    fn rotation_round_trip_is_accurate() {
        let g = smooth(512, 256);
        let rot = RotationMatrix::about_axis(&Vec3::new(0.3, 1.0, -0.4), 0.7);
        let back = rotate_erp(&rotate_erp(&g, &rot), &rot.transpose());
        let mae = mean_abs_diff(&g, &back);
        assert!(mae < 0.01, "mae {mae}");
    }

    #[test]
    fn rotation_composition() {
        let g = smooth(256, 128);
        let r1 = RotationMatrix::about_axis(&Vec3::new(1.0, 0.2, 0.0), 0.5);
        let r2 = RotationMatrix::about_y(1.1);
        let once = rotate_erp(&g, &r1.compose(&r2));
        let twice = rotate_erp(&rotate_erp(&g, &r2), &r1);
        assert!(mean_abs_diff(&once, &twice) < 0.02);
    }

    fn mean_abs_diff(a: &ErpGrid, b: &ErpGrid) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data().len() as f64
    }

    #[test]
    fn face_frames_are_right_handed_and_orthonormal() {
        for f in &FACE_FRAMES {
            assert_abs_diff_eq!(f.right().cross(&f.down()), f.normal());
        }
    }

    #[test]
    fn face_center_looks_along_face_axis() {
        for face in Face::ALL {
            let ray = face_pixel_ray(face, 3.5, 3.5, 7).normalize();
            assert!((ray - FaceFrame::of(face).normal()).norm() < 1e-9);
        }
    }

    #[test]
    fn plus_x_face_center_samples_image_center() {
        let mut g = ErpGrid::new(64, 32, 1);
        g.set(31, 15, 0, 1.0);
        g.set(32, 15, 0, 1.0);
        g.set(31, 16, 0, 1.0);
        g.set(32, 16, 0, 1.0);
        let cm = erp_to_cubemap(&g, 5).unwrap();
        assert_eq!(cm.get(Face::PosX, 2, 2, 0), 1.0);
        let (u, v) = vector_to_erp_pixel(&face_pixel_ray(Face::PosX, 2.5, 2.5, 5), 64, 32);
        assert_eq!((u, v), (32.0, 16.0));
    }

    #[test]
    fn constant_maps_stay_constant() {
        let g = ErpGrid::filled(64, 32, 2, 0.25);
        let cm = erp_to_cubemap(&g, 9).unwrap();
        for face in Face::ALL {
            assert!(cm.face(face).iter().all(|&v| (v - 0.25).abs() < 1e-15));
        }
        let back = cubemap_to_erp(&CubemapGrid::filled(9, 1, 0.75), 64, 32);
        assert!(back.data().iter().all(|&v| (v - 0.75).abs() < 1e-15));
    }

    #[test]
    fn erp_cubemap_round_trip_in_band() {
        let (w, h) = (512, 256);
        let g = smooth(w, h);
        let back = cubemap_to_erp(&erp_to_cubemap(&g, w / 4).unwrap(), w, h);
        let mut sum = 0.0;
        let mut count = 0;
        for j in 0..h {
            let theta = (j as f64 + 0.5) / h as f64 * PI;
            if (theta - PI / 2.0).abs() < PI / 3.0 {
                for i in 0..w {
                    sum += (g.get(i, j, 0) - back.get(i, j, 0)).abs();
                    count += 1;
                }
            }
        }
        assert!(sum / (count as f64) < 0.01);
    }

    #[test]
    fn single_face_support_is_preserved() {
        let (w, h, n) = (256, 128, 32);
        let mut cm = CubemapGrid::new(n, 1);
        cm.face_mut(Face::PosZ).iter_mut().for_each(|v| *v = 1.0);
        let g = cubemap_to_erp(&cm, w, h);
        // One face pixel spans 2/n in plane coordinates; allow that much slack.
        let slack = 2.0 / n as f64 * 1.5;
        for j in 0..h {
            for i in 0..w {
                let d = pixel_center_dir(i, j, w, h).to_vector();
                let on = d.z > 0.0 && (d.x / d.z).abs() < 1.0 - slack && (d.y / d.z).abs() < 1.0 - slack;
                let off = d.z <= 0.0 || (d.x / d.z).abs() > 1.0 + slack || (d.y / d.z).abs() > 1.0 + slack;
                let val = g.get(i, j, 0);
                if on {
                    assert_eq!(val, 1.0, "({i},{j}) inside +z");
                } else if off {
                    assert_eq!(val, 0.0, "({i},{j}) outside +z");
                }
            }
        }
    }

    #[test]
    fn pad_zero_is_identity() {
        let cm = pattern(6);
        assert_eq!(spherical_pad(&cm, 0).unwrap(), cm);
        assert!(spherical_pad(&cm, 6).is_err());
    }

    #[test]
    fn padded_constant_is_constant() {
        let cm = CubemapGrid::filled(8, 2, 3.0);
        let p = spherical_pad(&cm, 3).unwrap();
        for face in Face::ALL {
            assert!(p.face(face).iter().all(|&v| v == 3.0));
        }
    }

    fn pattern(n: usize) -> CubemapGrid {
        let mut cm = CubemapGrid::new(n, 1);
        for face in Face::ALL {
            for j in 0..n {
                for i in 0..n {
                    cm.set(face, i, j, 0, (face.index() * 10_000 + j * 100 + i) as f64);
                }
            }
        }
        cm
    }

    #[test]
    fn plus_x_right_strip_is_plus_z_left_column() {
        let n = 8;
        let cm = pattern(n);
        let p = spherical_pad(&cm, 2).unwrap();
        for j in 0..n {
            assert_eq!(p.get(Face::PosX, n + 2, j + 2, 0), cm.get(Face::PosZ, 0, j, 0));
            assert_eq!(p.get(Face::PosX, n + 3, j + 2, 0), cm.get(Face::PosZ, 1, j, 0));
        }
    }

    #[test]
    fn adjacency_table_is_symmetric() {
        let links = edge_links();
        for face in Face::ALL {
            for (e, edge) in Edge::ALL.into_iter().enumerate() {
                let l = links[face.index()][e];
                assert_ne!(l.neighbor, face);
                let back_e = Edge::ALL.iter().position(|&x| x == l.neighbor_edge).unwrap();
                let back = links[l.neighbor.index()][back_e];
                assert_eq!(back.neighbor, face);
                assert_eq!(back.neighbor_edge, edge);
                assert_eq!(back.reversed, l.reversed);
            }
        }
    }

    #[test]
    fn interior_is_copied_bit_exactly() {
        let n = 6;
        let cm = pattern(n);
        let p = spherical_pad(&cm, 2).unwrap();
        for face in Face::ALL {
            for j in 0..n {
                for i in 0..n {
                    assert_eq!(p.get(face, i + 2, j + 2, 0), cm.get(face, i, j, 0));
                }
            }
        }
    }
}
