//! Scale alignment between learned and reconstructed depth, and the yaw
//! rotation that turns two spherical frames into a left-right stereo pair
//! displaced along `+z`.

use crate::disparity::DepthMap;
use crate::error::{Error, Result};
use crate::grid::ErpGrid;
use nalgebra::UnitQuaternion;

use crate::sphere::{RotationMatrix, Vec3};

/// Camera-to-world rigid transform; translation in meters.
///
/// The orientation is kept as the unit quaternion it was read or built from,
/// so poses written to text come back bit-identical.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub orientation: UnitQuaternion<f64>,
    pub translation: Vec3,
}

impl CameraPose {
    pub fn new(rotation: RotationMatrix, translation: Vec3) -> Self {
        Self {
            orientation: rotation.to_quaternion(),
            translation,
        }
    }

    pub fn from_quaternion(orientation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self { orientation, translation }
    }

    pub fn at(translation: Vec3) -> Self {
        Self {
            orientation: UnitQuaternion::identity(),
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::at(Vec3::zeros())
    }

    pub fn rotation(&self) -> RotationMatrix {
        RotationMatrix::from_quaternion(&self.orientation)
    }
}

/// Reconstructed depth in meters where positive; 0 marks "no value".
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDepthMap(ErpGrid);

impl SparseDepthMap {
    pub fn new(grid: ErpGrid) -> Result<Self> {
        grid.ensure_channels(1, "sparse depth")?;
        grid.validate_finite()?;
        if let Some(index) = grid.data().iter().position(|&v| v < 0.0) {
            return Err(Error::Domain(format!("negative reconstructed depth at sample {index}")));
        }
        Ok(Self(grid))
    }

    pub fn grid(&self) -> &ErpGrid {
        &self.0
    }

    pub fn valid_count(&self) -> usize {
        self.0.data().iter().filter(|&&v| v > 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub image: ErpGrid,
    pub pose: CameraPose,
    /// Depth prior before refinement.
    pub prior_depth: Option<DepthMap>,
    pub sparse_depth: Option<SparseDepthMap>,
}

/// An ordered short sequence of spherical frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub id: usize,
    frames: Vec<Frame>,
}

impl FrameSequence {
    pub fn new(id: usize, frames: Vec<Frame>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::Config(format!(
                "a sequence needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        let (w, h) = (frames[0].image.width(), frames[0].image.height());
        for (n, f) in frames.iter().enumerate() {
            let sizes = std::iter::once((f.image.width(), f.image.height()))
                .chain(f.prior_depth.as_ref().map(|d| (d.width(), d.height())))
                .chain(f.sparse_depth.as_ref().map(|d| (d.grid().width(), d.grid().height())));
            for (fw, fh) in sizes {
                if (fw, fh) != (w, h) {
                    return Err(Error::Shape(format!(
                        "frame {n} is {fw}x{fh}, sequence is {w}x{h}"
                    )));
                }
            }
        }
        Ok(Self { id, frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].image.width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].image.height()
    }
}

/// How the per-pixel depth ratios are pooled into one scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScaleEstimator {
    /// Arithmetic mean of `D_nn / D_recon` over all valid pixels.
    #[default]
    MeanRatio,
    /// Median of the same ratios.
    MedianRatio,
}

/// Scale that maps reconstruction units onto the learned depth prior,
/// pooled over every valid pixel of every frame.
pub fn compute_scale(pairs: &[(&DepthMap, &SparseDepthMap)], estimator: ScaleEstimator) -> Result<f64> {
    let mut ratios = Vec::new();
    for (frame, (nn, recon)) in pairs.iter().enumerate() {
        nn.grid().ensure_raster(recon.grid(), "prior vs reconstructed depth")?;
        for (p, (&d_nn, &d_rec)) in nn.values().iter().zip(recon.grid().data()).enumerate() {
            if d_rec > 0.0 {
                if !(d_nn > 0.0) {
                    return Err(Error::Domain(format!(
                        "prior depth {d_nn} at frame {frame} sample {p} is not positive"
                    )));
                }
                ratios.push(d_nn / d_rec);
            }
        }
    }
    if ratios.is_empty() {
        return Err(Error::EmptyReconstruction);
    }
    Ok(match estimator {
        ScaleEstimator::MeanRatio => ratios.iter().sum::<f64>() / ratios.len() as f64,
        ScaleEstimator::MedianRatio => {
            ratios.sort_by(|a, b| a.total_cmp(b));
            let n = ratios.len();
            if n % 2 == 1 {
                ratios[n / 2]
            } else {
                0.5 * (ratios[n / 2 - 1] + ratios[n / 2])
            }
        }
    })
}

/// Scale factor of a whole sequence from its frames' priors and sparse maps.
pub fn sequence_scale(seq: &FrameSequence, estimator: ScaleEstimator) -> Result<f64> {
    let pairs: Vec<_> = seq
        .frames()
        .iter()
        .filter_map(|f| Some((f.prior_depth.as_ref()?, f.sparse_depth.as_ref()?)))
        .collect();
    compute_scale(&pairs, estimator)
}

/// Multiplies every camera translation by `scale`.
pub fn apply_scale(seq: &FrameSequence, scale: f64) -> Result<FrameSequence> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Domain(format!("scale must be positive, got {scale}")));
    }
    let mut out = seq.clone();
    for f in &mut out.frames {
        f.pose.translation *= scale;
    }
    Ok(out)
}

pub const DEFAULT_MAX_VERTICAL_RATIO: f64 = 0.2;

/// Yaw rotation mapping the horizontal part of `t_k − t_j` onto `+z`, and the
/// length of that horizontal part.
///
/// Rotating both frames' images with [`crate::sphere::rotate_erp`] by the
/// returned rotation yields a pair whose relative translation is
/// `(0, dy, b)` in the rotated frame.
pub fn alignment_rotation(
    pose_j: &CameraPose,
    pose_k: &CameraPose,
    max_vertical_ratio: f64,
) -> Result<(RotationMatrix, f64)> {
    let rel = pose_k.translation - pose_j.translation;
    let norm = rel.norm();
    if norm == 0.0 {
        return Err(Error::StaticViewpoint);
    }
    let ratio = rel.y.abs() / norm;
    if ratio > max_vertical_ratio {
        return Err(Error::VerticalMotion {
            ratio,
            max: max_vertical_ratio,
        });
    }
    let baseline = rel.x.hypot(rel.z);
    // R_y(a)·(x, 0, z) has z-component −x·sin(a) + z·cos(a); choose a so the
    // whole horizontal part lands on +z.
    let angle = (-rel.x).atan2(rel.z);
    Ok((RotationMatrix::about_y(angle), baseline))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn depth(values: &[f64]) -> DepthMap {
        DepthMap::new(ErpGrid::from_vec(values.len(), 1, 1, values.to_vec()).unwrap()).unwrap()
    }

    fn sparse(values: &[f64]) -> SparseDepthMap {
        SparseDepthMap::new(ErpGrid::from_vec(values.len(), 1, 1, values.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn uniform_ratio() {
        let nn = depth(&[2.0, 4.0, 6.0]);
        let rec = sparse(&[1.0, 2.0, 3.0]);
        assert_eq!(compute_scale(&[(&nn, &rec)], ScaleEstimator::MeanRatio).unwrap(), 2.0);
    }

    #[test]
    fn ratios_one_two_three_average_to_two() {
        let nn = depth(&[1.0, 2.0, 3.0, 9.0]);
        let rec = sparse(&[1.0, 1.0, 1.0, 0.0]);
        assert_eq!(compute_scale(&[(&nn, &rec)], ScaleEstimator::MeanRatio).unwrap(), 2.0);
        assert_eq!(compute_scale(&[(&nn, &rec)], ScaleEstimator::MedianRatio).unwrap(), 2.0);
    }

    #[test]
    fn pooled_over_frames_by_pixel_count() {
        // Frame 0 contributes one ratio, frame 1 three; the mean is over pixels.
        let a = depth(&[4.0, 1.0]);
        let ra = sparse(&[1.0, 0.0]);
        let b = depth(&[1.0, 1.0, 1.0]);
        let rb = sparse(&[1.0, 1.0, 1.0]);
        let s = compute_scale(&[(&a, &ra), (&b, &rb)], ScaleEstimator::MeanRatio).unwrap();
        assert_abs_diff_eq!(s, 7.0 / 4.0);
    }

    #[test]
    fn empty_reconstruction_is_an_error() {
        let nn = depth(&[1.0, 2.0]);
        let rec = sparse(&[0.0, 0.0]);
        assert!(matches!(
            compute_scale(&[(&nn, &rec)], ScaleEstimator::MeanRatio),
            Err(Error::EmptyReconstruction)
        ));
        assert!(matches!(compute_scale(&[], ScaleEstimator::MeanRatio), Err(Error::EmptyReconstruction)));
    }

    proptest! {
        #[test]
        fn scale_is_homogeneous(values in proptest::collection::vec(0.1f64..50.0, 1..40), alpha in 0.01f64..100.0) {
            let nn = depth(&values.iter().map(|v| v * 1.7 + 0.3).collect::<Vec<_>>());
            let rec = sparse(&values);
            let scaled = sparse(&values.iter().map(|v| v * alpha).collect::<Vec<_>>());
            let s = compute_scale(&[(&nn, &rec)], ScaleEstimator::MeanRatio).unwrap();
            let s2 = compute_scale(&[(&nn, &scaled)], ScaleEstimator::MeanRatio).unwrap();
            prop_assert!((s2 * alpha / s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn scale_ignores_frame_order(a in proptest::collection::vec(0.5f64..5.0, 3), b in proptest::collection::vec(0.5f64..5.0, 3)) {
            let (na, nb) = (depth(&a), depth(&b));
            let (ra, rb) = (sparse(&b), sparse(&a));
            let s1 = compute_scale(&[(&na, &ra), (&nb, &rb)], ScaleEstimator::MeanRatio).unwrap();
            let s2 = compute_scale(&[(&nb, &rb), (&na, &ra)], ScaleEstimator::MeanRatio).unwrap();
            prop_assert!((s1 - s2).abs() <= 1e-12 * s1);
        }
    }

    fn seq(translations: &[[f64; 3]]) -> FrameSequence {
        let frames = translations
            .iter()
            .map(|t| Frame {
                image: ErpGrid::new(4, 2, 3),
                pose: CameraPose::at(Vec3::from(*t)),
                prior_depth: None,
                sparse_depth: None,
            })
            .collect();
        FrameSequence::new(0, frames).unwrap()
    }

    #[test]
    fn apply_scale_multiplies_translations() {
        let s = seq(&[[0.0, 0.0, 1.0], [1.0, 2.0, 3.0]]);
        assert_eq!(apply_scale(&s, 1.0).unwrap(), s);
        let twice = apply_scale(&s, 2.0).unwrap();
        assert_eq!(twice.frames()[0].pose.translation, Vec3::new(0.0, 0.0, 2.0));
        let composed = apply_scale(&apply_scale(&s, 3.0).unwrap(), 0.5).unwrap();
        assert_eq!(composed, apply_scale(&s, 1.5).unwrap());
        assert!(apply_scale(&s, 0.0).is_err());
        assert!(apply_scale(&s, -1.0).is_err());
    }

    #[test]
    fn single_frame_sequence_rejected() {
        let frame = Frame {
            image: ErpGrid::new(4, 2, 3),
            pose: CameraPose::identity(),
            prior_depth: None,
            sparse_depth: None,
        };
        assert!(matches!(FrameSequence::new(0, vec![frame]), Err(Error::Config(_))));
    }

    #[test]
    fn forward_motion_needs_no_rotation() {
        let (r, b) = alignment_rotation(&CameraPose::identity(), &CameraPose::at(Vec3::new(0.0, 0.0, 2.0)), 0.2).unwrap();
        assert_abs_diff_eq!(*r.matrix(), *RotationMatrix::identity().matrix(), epsilon = 1e-15);
        assert_eq!(b, 2.0);
    }

    #[test]
    fn sideways_motion_rotates_minus_quarter_turn() {
        let (r, b) = alignment_rotation(&CameraPose::identity(), &CameraPose::at(Vec3::new(1.0, 0.0, 0.0)), 0.2).unwrap();
        assert_abs_diff_eq!(*r.matrix(), *RotationMatrix::about_y(-PI / 2.0).matrix(), epsilon = 1e-15);
        assert_abs_diff_eq!(r.apply(&Vec3::x()), Vec3::z(), epsilon = 1e-15);
        assert_eq!(b, 1.0);
    }

    #[test]
    fn vertical_and_static_motion_rejected() {
        let o = CameraPose::identity();
        assert!(matches!(
            alignment_rotation(&o, &CameraPose::at(Vec3::new(0.0, 1.0, 0.0)), 0.2),
            Err(Error::VerticalMotion { .. })
        ));
        assert!(matches!(alignment_rotation(&o, &o, 0.2), Err(Error::StaticViewpoint)));
        // ~11° of climb passes the default threshold.
        let tilt = 11f64.to_radians();
        assert!(alignment_rotation(&o, &CameraPose::at(Vec3::new(tilt.cos(), tilt.sin(), 0.0)), 0.2).is_ok());
    }

    proptest! {
        #[test]
        fn aligned_translation_lies_on_plus_z(x in -5.0f64..5.0, z in -5.0f64..5.0, y in -0.1f64..0.1) {
            prop_assume!(x.hypot(z) > 1.0);
            let pj = CameraPose::at(Vec3::new(0.3, -0.2, 1.0));
            let pk = CameraPose::at(pj.translation + Vec3::new(x, y, z));
            let (r, b) = alignment_rotation(&pj, &pk, 0.2).unwrap();
            let rel = r.apply(&(pk.translation - pj.translation));
            prop_assert!(rel.x.abs() < 1e-9);
            prop_assert!((rel.y - y).abs() < 1e-9);
            prop_assert!((rel.z - b).abs() < 1e-9);
        }
    }
}
