//! Raster containers for equirectangular and cubemap data.
//!
//! Samples are stored row-major and channel-interleaved as `f64`. Row 0 of an
//! [`ErpGrid`] is the north-pole edge; pixel `(i, j)` has its center at the
//! continuous coordinate `(i + 0.5, j + 0.5)`.

use crate::error::{Error, Result};

/// Fractional offsets closer than this to a pixel center are snapped onto it,
/// so resampling along exact pixel-center coordinates reproduces stored values.
const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ErpGrid {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ErpGrid {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0 && channels > 0, "empty grid");
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "grid dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "expected {} samples for {width}x{height}x{channels}, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds a grid by evaluating `f(i, j, out)` for every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, &mut [f64]),
    ) -> Self {
        let mut grid = Self::new(width, height, channels);
        for j in 0..height {
            for i in 0..width {
                let start = (j * width + i) * channels;
                f(i, j, &mut grid.data[start..start + channels]);
            }
        }
        grid
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, i: usize, j: usize) -> &[f64] {
        let start = (j * self.width + i) * self.channels;
        &self.data[start..start + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let start = (j * self.width + i) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[(j * self.width + i) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, c: usize, value: f64) {
        self.data[(j * self.width + i) * self.channels + c] = value;
    }

    pub fn same_shape(&self, other: &ErpGrid) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn same_raster(&self, other: &ErpGrid) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn ensure_raster(&self, other: &ErpGrid, what: &str) -> Result<()> {
        if self.same_raster(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    pub(crate) fn ensure_channels(&self, channels: usize, what: &str) -> Result<()> {
        if self.channels == channels {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: expected {channels} channel(s), got {}",
                self.channels
            )))
        }
    }

    /// Rejects grids holding NaN or infinite samples.
    pub fn validate_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }

    /// Extracts a single channel as its own grid.
    pub fn channel(&self, c: usize) -> ErpGrid {
        assert!(c < self.channels);
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        ErpGrid {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ErpGrid {
        ErpGrid {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Bilinear interpolation at continuous pixel coordinates, writing one
    /// value per channel into `out`. Longitude (`u`) wraps; the vertical axis
    /// clamps to the pole rows.
    pub fn sample_into(&self, u: f64, v: f64, out: &mut [f64]) {
        let taps = self.taps(u, v);
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            *o = taps.blend(|i, j| self.get(i, j, c));
        }
    }

    /// Single-channel convenience around [`ErpGrid::sample_into`].
    #[inline]
    pub fn sample1(&self, u: f64, v: f64) -> f64 {
        debug_assert_eq!(self.channels, 1);
        let taps = self.taps(u, v);
        taps.blend(|i, j| self.data[j * self.width + i])
    }

    /// Interpolated value and its partial derivatives with respect to `u` and
    /// `v`, per channel. Derivatives are those of the bilinear cell that
    /// contains the point; clamped vertical regions have zero `v` derivative.
    pub fn sample_with_gradient(&self, u: f64, v: f64, value: &mut [f64], du: &mut [f64], dv: &mut [f64]) {
        let t = self.taps(u, v);
        for c in 0..self.channels {
            let a = self.get(t.x0, t.y0, c);
            let b = self.get(t.x1, t.y0, c);
            let cc = self.get(t.x0, t.y1, c);
            let d = self.get(t.x1, t.y1, c);
            value[c] = t.blend(|i, j| self.get(i, j, c));
            du[c] = (1.0 - t.fy) * (b - a) + t.fy * (d - cc);
            dv[c] = if t.y_clamped {
                0.0
            } else {
                (1.0 - t.fx) * (cc - a) + t.fx * (d - b)
            };
        }
    }

    fn taps(&self, u: f64, v: f64) -> Taps {
        let w = self.width as i64;
        let h = self.height as i64;

        let x = u - 0.5;
        let mut x0 = x.floor();
        let mut fx = x - x0;
        if fx < SNAP {
            fx = 0.0;
        } else if fx > 1.0 - SNAP {
            fx = 0.0;
            x0 += 1.0;
        }
        let x0 = (x0 as i64).rem_euclid(w);
        let x1 = (x0 + 1).rem_euclid(w);

        let y = v - 0.5;
        let (y0, y1, fy, y_clamped) = if y <= 0.0 {
            (0, 0, 0.0, true)
        } else if y >= (h - 1) as f64 {
            (h - 1, h - 1, 0.0, true)
        } else {
            let mut y0 = y.floor();
            let mut fy = y - y0;
            if fy < SNAP {
                fy = 0.0;
            } else if fy > 1.0 - SNAP {
                fy = 0.0;
                y0 += 1.0;
            }
            let y0 = y0 as i64;
            (y0, (y0 + 1).min(h - 1), fy, false)
        };

        Taps {
            x0: x0 as usize,
            x1: x1 as usize,
            y0: y0 as usize,
            y1: y1 as usize,
            fx,
            fy,
            y_clamped,
        }
    }
}

struct Taps {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: f64,
    fy: f64,
    y_clamped: bool,
}

impl Taps {
    #[inline]
    fn blend(&self, at: impl Fn(usize, usize) -> f64) -> f64 {
        // Zero weights are skipped so exact pixel-center hits return the stored
        // sample unchanged.
        let mut acc = 0.0;
        let wx0 = 1.0 - self.fx;
        let wy0 = 1.0 - self.fy;
        acc += wx0 * wy0 * at(self.x0, self.y0);
        if self.fx != 0.0 {
            acc += self.fx * wy0 * at(self.x1, self.y0);
        }
        if self.fy != 0.0 {
            acc += wx0 * self.fy * at(self.x0, self.y1);
            if self.fx != 0.0 {
                acc += self.fx * self.fy * at(self.x1, self.y1);
            }
        }
        acc
    }
}

/// Free-function form of [`ErpGrid::sample_into`] returning an owned sample.
pub fn bilinear_sample(grid: &ErpGrid, u: f64, v: f64) -> Vec<f64> {
    let mut out = vec![0.0; grid.channels()];
    grid.sample_into(u, v, &mut out);
    out
}

/// Cube face identifiers in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Face {
    PosX = 0,
    NegX = 1,
    PosY = 2,
    NegY = 3,
    PosZ = 4,
    NegZ = 5,
}

impl Face {
    pub const ALL: [Face; 6] = [
        Face::PosX,
        Face::NegX,
        Face::PosY,
        Face::NegY,
        Face::PosZ,
        Face::NegZ,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Face {
        Face::ALL[index]
    }

    pub fn name(self) -> &'static str {
        match self {
            Face::PosX => "+x",
            Face::NegX => "-x",
            Face::PosY => "+y",
            Face::NegY => "-y",
            Face::PosZ => "+z",
            Face::NegZ => "-z",
        }
    }
}

/// Six square face rasters ordered `(+x, −x, +y, −y, +z, −z)`.
///
/// Each face is stored row-major with `channels` interleaved samples, the same
/// layout as [`ErpGrid`]. Face orientation is given by
/// [`crate::sphere::FACE_FRAMES`].
#[derive(Debug, Clone, PartialEq)]
pub struct CubemapGrid {
    face_size: usize,
    channels: usize,
    faces: Vec<Vec<f64>>,
}

impl CubemapGrid {
    pub fn new(face_size: usize, channels: usize) -> Self {
        Self::filled(face_size, channels, 0.0)
    }

    pub fn filled(face_size: usize, channels: usize, value: f64) -> Self {
        assert!(face_size > 0 && channels > 0, "empty cubemap");
        Self {
            face_size,
            channels,
            faces: vec![vec![value; face_size * face_size * channels]; 6],
        }
    }

    pub fn from_faces(face_size: usize, channels: usize, faces: Vec<Vec<f64>>) -> Result<Self> {
        if faces.len() != 6 {
            return Err(Error::Shape(format!("expected 6 faces, got {}", faces.len())));
        }
        let expected = face_size * face_size * channels;
        if face_size == 0 || channels == 0 || faces.iter().any(|f| f.len() != expected) {
            return Err(Error::Shape(format!(
                "every face must hold {expected} samples for size {face_size} and {channels} channel(s)"
            )));
        }
        Ok(Self {
            face_size,
            channels,
            faces,
        })
    }

    pub fn face_size(&self) -> usize {
        self.face_size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn face(&self, face: Face) -> &[f64] {
        &self.faces[face.index()]
    }

    pub fn face_mut(&mut self, face: Face) -> &mut [f64] {
        &mut self.faces[face.index()]
    }

    #[inline]
    pub fn get(&self, face: Face, i: usize, j: usize, c: usize) -> f64 {
        self.faces[face.index()][(j * self.face_size + i) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, face: Face, i: usize, j: usize, c: usize, value: f64) {
        let n = self.face_size;
        self.faces[face.index()][(j * n + i) * self.channels + c] = value;
    }
}
