//! On-disk formats: PFM depth, OFLO flow, text poses/scenes/meta, PNG color,
//! and the sequence directory layout that ties them together.
//!
//! Binary formats are little-endian. Readers reject anything malformed and
//! report the byte offset of the problem.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion};

use crate::alignment::{CameraPose, Frame, FrameSequence};
use crate::disparity::DepthMap;
use crate::error::{Error, Result};
use crate::grid::ErpGrid;
use crate::sphere::Vec3;
use crate::synth::{Albedo, Primitive, Scene};
use crate::temporal::FlowField;

fn display_name(path: &Path) -> String {
    path.display().to_string()
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- PFM

/// Encodes a single-channel grid as little-endian grayscale PFM (`Pf`, scale
/// `-1.0`, rows bottom to top, `f32` samples).
pub fn pfm_encode(grid: &ErpGrid) -> Result<Vec<u8>> {
    grid.ensure_channels(1, "PFM raster")?;
    let (w, h) = (grid.width(), grid.height());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * w * h);
    for j in (0..h).rev() {
        for i in 0..w {
            out.extend_from_slice(&(grid.get(i, j, 0) as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Next `\n`-terminated header line starting at `pos`: (text, start, next).
fn header_line<'a>(bytes: &'a [u8], pos: usize, file: &str) -> Result<(&'a str, usize, usize)> {
    let rest = bytes.get(pos..).unwrap_or_default();
    let len = rest
        .iter()
        .take(64)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::parse(file, pos, "unterminated header line"))?;
    let text = std::str::from_utf8(&rest[..len]).map_err(|_| Error::parse(file, pos, "header is not ASCII"))?;
    Ok((text.trim_end_matches('\r'), pos, pos + len + 1))
}

/// Decodes a grayscale PFM. Non-finite samples are returned as-is; validate
/// with [`ErpGrid::validate_finite`] or a typed constructor.
pub fn pfm_decode(bytes: &[u8], file: &str) -> Result<ErpGrid> {
    let (magic, _, pos) = header_line(bytes, 0, file)?;
    match magic {
        "Pf" => {}
        "PF" => return Err(Error::parse(file, 0, "three-channel PFM is not supported")),
        other => return Err(Error::parse(file, 0, format!("bad magic `{other}`, expected `Pf`"))),
    }
    let (dims, start, pos) = header_line(bytes, pos, file)?;
    let parsed: Vec<Option<usize>> = dims.split_whitespace().map(|t| t.parse().ok()).collect();
    let (w, h) = match parsed.as_slice() {
        [Some(w), Some(h)] if *w > 0 && *h > 0 => (*w, *h),
        _ => return Err(Error::parse(file, start, format!("bad dimensions `{dims}`"))),
    };
    let (scale_text, start, pos) = header_line(bytes, pos, file)?;
    let scale: f64 = scale_text
        .trim()
        .parse()
        .map_err(|_| Error::parse(file, start, format!("bad scale `{scale_text}`")))?;
    if scale > 0.0 {
        return Err(Error::parse(file, start, "big-endian PFM (positive scale) is not supported"));
    }
    if !(scale < 0.0) {
        return Err(Error::parse(file, start, format!("invalid scale `{scale_text}`")));
    }
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::parse(file, start, "dimensions overflow"))?;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(Error::parse(
            file,
            bytes.len(),
            format!("truncated payload: expected {expected} bytes, found {}", payload.len()),
        ));
    }
    if payload.len() > expected {
        return Err(Error::parse(
            file,
            pos + expected,
            format!("{} trailing bytes after payload", payload.len() - expected),
        ));
    }
    let mut grid = ErpGrid::new(w, h, 1);
    for (n, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        let (i, row) = (n % w, n / w);
        grid.set(i, h - 1 - row, 0, v as f64);
    }
    Ok(grid)
}

pub fn pfm_write(path: &Path, grid: &ErpGrid) -> Result<()> {
    write_bytes(path, &pfm_encode(grid)?)
}

pub fn pfm_read(path: &Path) -> Result<ErpGrid> {
    pfm_decode(&read_bytes(path)?, &display_name(path))
}

pub fn depth_read(path: &Path) -> Result<DepthMap> {
    DepthMap::new(pfm_read(path)?)
}

// ---------------------------------------------------------------- OFLO

const OFLO_MAGIC: &[u8; 4] = b"OFLO";
const OFLO_HEADER: usize = 12;

/// `OFLO`, `u32` width, `u32` height, then `(du, dv)` `f32` pairs row-major
/// from the top row. Values are stored raw; longitude wrap applies at use.
pub fn flow_encode(flow: &FlowField) -> Result<Vec<u8>> {
    let g = flow.grid();
    let dim = |n: usize| u32::try_from(n).map_err(|_| Error::Shape(format!("dimension {n} exceeds u32")));
    let mut out = Vec::with_capacity(OFLO_HEADER + 8 * g.len_pixels());
    out.extend_from_slice(OFLO_MAGIC);
    out.extend_from_slice(&dim(g.width())?.to_le_bytes());
    out.extend_from_slice(&dim(g.height())?.to_le_bytes());
    for v in g.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn flow_decode(bytes: &[u8], file: &str) -> Result<FlowField> {
    if bytes.len() < OFLO_HEADER {
        return Err(Error::parse(
            file,
            bytes.len(),
            format!("truncated header: expected {OFLO_HEADER} bytes, found {}", bytes.len()),
        ));
    }
    if &bytes[..4] != OFLO_MAGIC {
        return Err(Error::parse(file, 0, "bad magic, expected `OFLO`"));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    if w == 0 || h == 0 {
        return Err(Error::parse(file, 4, format!("empty raster {w}x{h}")));
    }
    let expected = OFLO_HEADER + 8 * w * h;
    if bytes.len() != expected {
        return Err(Error::parse(
            file,
            bytes.len().min(expected),
            format!("size mismatch: expected {expected} bytes for {w}x{h}, found {}", bytes.len()),
        ));
    }
    let data = bytes[OFLO_HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    FlowField::new(ErpGrid::from_vec(w, h, 2, data)?)
}

pub fn flow_write(path: &Path, flow: &FlowField) -> Result<()> {
    write_bytes(path, &flow_encode(flow)?)
}

pub fn flow_read(path: &Path) -> Result<FlowField> {
    flow_decode(&read_bytes(path)?, &display_name(path))
}

// ---------------------------------------------------------------- text helpers

/// Whitespace tokens of `text` with their byte offsets.
fn tokens(text: &str) -> impl Iterator<Item = (&str, usize)> {
    let base = text.as_ptr() as usize;
    text.split_whitespace().map(move |t| (t, t.as_ptr() as usize - base))
}

/// Non-empty, non-comment lines as token lists.
fn records(text: &str) -> Vec<Vec<(&str, usize)>> {
    let base = text.as_ptr() as usize;
    text.lines()
        .map(|line| {
            let content = line.split('#').next().unwrap_or_default();
            let off = content.as_ptr() as usize - base;
            tokens(content).map(|(t, o)| (t, o + off)).collect::<Vec<_>>()
        })
        .filter(|r: &Vec<_>| !r.is_empty())
        .collect()
}

fn number<T: std::str::FromStr>(tok: (&str, usize), file: &str) -> Result<T> {
    tok.0
        .parse()
        .map_err(|_| Error::parse(file, tok.1, format!("invalid number `{}`", tok.0)))
}

fn finite(tok: (&str, usize), file: &str) -> Result<f64> {
    let v: f64 = number(tok, file)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::parse(file, tok.1, format!("non-finite value `{}`", tok.0)))
    }
}

// ---------------------------------------------------------------- poses

const QUATERNION_TOLERANCE: f64 = 1e-3;

/// Parses `idx tx ty tz qx qy qz qw` lines (camera-to-world). Quaternions
/// within 1e-3 of unit norm are normalized; others are rejected.
pub fn poses_parse(text: &str, file: &str) -> Result<Vec<(usize, CameraPose)>> {
    let mut out: Vec<(usize, CameraPose)> = Vec::new();
    for rec in records(text) {
        if rec.len() != 8 {
            return Err(Error::parse(file, rec[0].1, format!("expected 8 fields, found {}", rec.len())));
        }
        let idx: usize = number(rec[0], file)?;
        if out.iter().any(|(i, _)| *i == idx) {
            return Err(Error::parse(file, rec[0].1, format!("duplicate frame index {idx}")));
        }
        let v: Vec<f64> = rec[1..].iter().map(|&t| finite(t, file)).collect::<Result<_>>()?;
        let q = Quaternion::new(v[6], v[3], v[4], v[5]);
        let norm = q.norm();
        if (norm - 1.0).abs() > QUATERNION_TOLERANCE {
            return Err(Error::parse(
                file,
                rec[4].1,
                format!("quaternion norm {norm} is not within {QUATERNION_TOLERANCE} of 1"),
            ));
        }
        // Quaternions already unit to within round-off are kept verbatim so
        // that written poses read back bit-identically.
        let orientation = if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::new_normalize(q)
        };
        out.push((idx, CameraPose::from_quaternion(orientation, Vec3::new(v[0], v[1], v[2]))));
    }
    Ok(out)
}

/// One pose per line with 17 significant digits.
pub fn poses_format(poses: &[(usize, CameraPose)]) -> String {
    let mut s = String::from("# idx tx ty tz qx qy qz qw\n");
    for (idx, pose) in poses {
        let q = pose.orientation;
        let t = pose.translation;
        let _ = write!(s, "{idx}");
        for v in [t.x, t.y, t.z, q.i, q.j, q.k, q.w] {
            let _ = write!(s, " {v:.16e}");
        }
        s.push('\n');
    }
    s
}

pub fn poses_read(path: &Path) -> Result<Vec<(usize, CameraPose)>> {
    poses_parse(&read_text(path)?, &display_name(path))
}

pub fn poses_write(path: &Path, poses: &[(usize, CameraPose)]) -> Result<()> {
    write_bytes(path, poses_format(poses).as_bytes())
}

// ---------------------------------------------------------------- scenes

fn vec3(toks: &[(&str, usize)], file: &str) -> Result<Vec3> {
    Ok(Vec3::new(finite(toks[0], file)?, finite(toks[1], file)?, finite(toks[2], file)?))
}

fn parse_albedo(toks: &[(&str, usize)], file: &str, at: usize) -> Result<Albedo> {
    let rgb = |t: &[(&str, usize)]| -> Result<[f64; 3]> {
        Ok([finite(t[0], file)?, finite(t[1], file)?, finite(t[2], file)?])
    };
    match toks.first().map(|t| t.0) {
        Some("solid") if toks.len() == 4 => Ok(Albedo::Solid(rgb(&toks[1..4])?)),
        Some("checker") if toks.len() == 8 => Ok(Albedo::Checker {
            a: rgb(&toks[1..4])?,
            b: rgb(&toks[4..7])?,
            period: finite(toks[7], file)?,
        }),
        Some(kind @ ("solid" | "checker")) => Err(Error::parse(
            file,
            toks[0].1,
            format!("wrong number of fields for `{kind}` albedo"),
        )),
        Some(other) => Err(Error::parse(file, toks[0].1, format!("unknown albedo `{other}`"))),
        None => Err(Error::parse(file, at, "missing albedo")),
    }
}

/// One primitive per line:
///
/// ```text
/// sky    R                       <albedo>
/// plane  px py pz nx ny nz       <albedo>
/// sphere cx cy cz r              <albedo>
/// box    x0 y0 z0 x1 y1 z1       <albedo>
/// ```
///
/// where `<albedo>` is `solid r g b` or `checker r g b r g b period`.
pub fn scene_parse(text: &str, file: &str) -> Result<Scene> {
    let mut prims = Vec::new();
    for rec in records(text) {
        let (kind, at) = rec[0];
        let need = match kind {
            "sky" => 1,
            "sphere" => 4,
            "plane" | "box" => 6,
            other => return Err(Error::parse(file, at, format!("unknown primitive `{other}`"))),
        };
        if rec.len() < 1 + need {
            return Err(Error::parse(file, at, format!("too few fields for `{kind}`")));
        }
        let args = &rec[1..1 + need];
        let albedo = parse_albedo(&rec[1 + need..], file, at)?;
        prims.push(match kind {
            "sky" => Primitive::Sky {
                radius: finite(args[0], file)?,
                albedo,
            },
            "sphere" => Primitive::Sphere {
                center: vec3(args, file)?,
                radius: finite(args[3], file)?,
                albedo,
            },
            "plane" => Primitive::Plane {
                point: vec3(args, file)?,
                normal: vec3(&args[3..], file)?,
                albedo,
            },
            _ => Primitive::Box {
                min: vec3(args, file)?,
                max: vec3(&args[3..], file)?,
                albedo,
            },
        });
    }
    Scene::new(prims).map_err(|e| Error::parse(file, 0, e.to_string()))
}

fn format_albedo(a: &Albedo) -> String {
    match a {
        Albedo::Solid(c) => format!("solid {} {} {}", c[0], c[1], c[2]),
        Albedo::Checker { a, b, period } => {
            format!("checker {} {} {} {} {} {} {period}", a[0], a[1], a[2], b[0], b[1], b[2])
        }
    }
}

pub fn scene_format(scene: &Scene) -> String {
    let mut s = String::new();
    for p in scene.primitives() {
        let line = match p {
            Primitive::Sky { radius, albedo } => format!("sky {radius} {}", format_albedo(albedo)),
            Primitive::Sphere { center: c, radius, albedo } => {
                format!("sphere {} {} {} {radius} {}", c.x, c.y, c.z, format_albedo(albedo))
            }
            Primitive::Plane { point: p, normal: n, albedo } => format!(
                "plane {} {} {} {} {} {} {}",
                p.x,
                p.y,
                p.z,
                n.x,
                n.y,
                n.z,
                format_albedo(albedo)
            ),
            Primitive::Box { min, max, albedo } => format!(
                "box {} {} {} {} {} {} {}",
                min.x,
                min.y,
                min.z,
                max.x,
                max.y,
                max.z,
                format_albedo(albedo)
            ),
        };
        s.push_str(&line);
        s.push('\n');
    }
    s
}

pub fn scene_read(path: &Path) -> Result<Scene> {
    scene_parse(&read_text(path)?, &display_name(path))
}

pub fn scene_write(path: &Path, scene: &Scene) -> Result<()> {
    write_bytes(path, scene_format(scene).as_bytes())
}

// ---------------------------------------------------------------- meta

/// `key=value` sequence metadata. Unknown keys are kept in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Meta {
    pub width: usize,
    pub height: usize,
    /// Camera spacing in meters.
    pub baseline: f64,
    /// Metric scale applied to the depth maps.
    pub scale: f64,
    pub extra: Vec<(String, String)>,
}

impl Meta {
    pub fn new(width: usize, height: usize, baseline: f64, scale: f64) -> Self {
        Self {
            width,
            height,
            baseline,
            scale,
            extra: Vec::new(),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.extra.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.extra.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.extra.push((key.to_string(), value)),
        }
    }

    pub fn format(&self) -> String {
        let mut s = format!(
            "width={}\nheight={}\nbaseline={}\nscale={}\n",
            self.width, self.height, self.baseline, self.scale
        );
        for (k, v) in &self.extra {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn parse(text: &str, file: &str) -> Result<Meta> {
        let base = text.as_ptr() as usize;
        let (mut width, mut height, mut baseline, mut scale) = (None, None, None, None);
        let mut extra = Vec::new();
        for line in text.lines() {
            let off = line.as_ptr() as usize - base;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (k, v) = trimmed
                .split_once('=')
                .ok_or_else(|| Error::parse(file, off, format!("expected key=value, found `{trimmed}`")))?;
            let (k, v) = (k.trim(), v.trim());
            let tok = (v, off + line.find(v).unwrap_or(0));
            match k {
                "width" => width = Some(number::<usize>(tok, file)?),
                "height" => height = Some(number::<usize>(tok, file)?),
                "baseline" => baseline = Some(finite(tok, file)?),
                "scale" => scale = Some(finite(tok, file)?),
                _ => extra.push((k.to_string(), v.to_string())),
            }
        }
        let missing = |key: &str| Error::parse(file, text.len(), format!("missing key `{key}`"));
        Ok(Meta {
            width: width.ok_or_else(|| missing("width"))?,
            height: height.ok_or_else(|| missing("height"))?,
            baseline: baseline.ok_or_else(|| missing("baseline"))?,
            scale: scale.ok_or_else(|| missing("scale"))?,
            extra,
        })
    }

    pub fn read(path: &Path) -> Result<Meta> {
        Meta::parse(&read_text(path)?, &display_name(path))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.format().as_bytes())
    }
}

// ---------------------------------------------------------------- PNG

fn image_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Reads an 8-bit PNG as an RGB grid with values in `[0, 1]`.
pub fn png_read(path: &Path) -> Result<ErpGrid> {
    let img = image::open(path).map_err(|e| image_error(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    ErpGrid::from_vec(w, h, 3, data)
}

/// Writes a 1- or 3-channel grid as 8-bit PNG, clamping to `[0, 1]`.
pub fn png_write(path: &Path, grid: &ErpGrid) -> Result<()> {
    let quantize = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let (w, h) = (grid.width() as u32, grid.height() as u32);
    let bytes: Vec<u8> = grid.data().iter().map(|&v| quantize(v)).collect();
    let color = match grid.channels() {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        n => return Err(Error::Shape(format!("PNG output needs 1 or 3 channels, got {n}"))),
    };
    image::save_buffer_with_format(path, &bytes, w, h, color, image::ImageFormat::Png)
        .map_err(|e| image_error(path, e))
}

// ---------------------------------------------------------------- manifest

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("frame_{index:04}.png"))
}

pub fn depth_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("depth_{index:04}.pfm"))
}

pub fn flow_path(dir: &Path, j: usize, k: usize) -> PathBuf {
    dir.join(format!("flow_{j:04}_{k:04}.oflo"))
}

pub const POSES_FILE: &str = "poses.txt";
pub const SCENE_FILE: &str = "scene.txt";
pub const META_FILE: &str = "meta.txt";

/// A sequence directory loaded into memory.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub dir: PathBuf,
    pub frames: Vec<ErpGrid>,
    /// Depth per frame where a `depth_%04d.pfm` exists.
    pub depths: Vec<Option<DepthMap>>,
    pub poses: Vec<CameraPose>,
    pub meta: Meta,
    pub scene: Option<Scene>,
}

impl Manifest {
    /// Loads and validates a sequence directory: frames contiguous from 0,
    /// one pose per frame, every raster matching `meta.txt`. Flows are read
    /// on demand with [`Manifest::flow`].
    pub fn load(dir: &Path) -> Result<Manifest> {
        let meta = Meta::read(&dir.join(META_FILE))?;
        let mut frames = Vec::new();
        while frame_path(dir, frames.len()).exists() {
            frames.push(png_read(&frame_path(dir, frames.len()))?);
        }
        if frames.is_empty() {
            return Err(Error::io(
                frame_path(dir, 0),
                std::io::Error::new(std::io::ErrorKind::NotFound, "no frames in sequence"),
            ));
        }
        let depths = (0..frames.len())
            .map(|n| {
                let p = depth_path(dir, n);
                p.exists().then(|| depth_read(&p)).transpose()
            })
            .collect::<Result<Vec<_>>>()?;

        let poses_file = dir.join(POSES_FILE);
        let mut listed = poses_read(&poses_file)?;
        listed.sort_by_key(|(i, _)| *i);
        if listed.len() != frames.len() || listed.iter().enumerate().any(|(n, (i, _))| n != *i) {
            return Err(Error::parse(
                display_name(&poses_file),
                0,
                format!("expected poses for frames 0..{}", frames.len()),
            ));
        }
        let poses = listed.into_iter().map(|(_, p)| p).collect();

        let scene_file = dir.join(SCENE_FILE);
        let scene = scene_file.exists().then(|| scene_read(&scene_file)).transpose()?;

        let m = Manifest {
            dir: dir.to_path_buf(),
            frames,
            depths,
            poses,
            meta,
            scene,
        };
        m.check_sizes()?;
        Ok(m)
    }

    fn check_sizes(&self) -> Result<()> {
        let want = (self.meta.width, self.meta.height);
        let rasters = self
            .frames
            .iter()
            .enumerate()
            .map(|(n, f)| (frame_path(&self.dir, n), f.width(), f.height()))
            .chain(
                self.depths
                    .iter()
                    .enumerate()
                    .filter_map(|(n, d)| d.as_ref().map(|d| (depth_path(&self.dir, n), d.width(), d.height()))),
            );
        for (path, w, h) in rasters {
            if (w, h) != want {
                return Err(Error::Shape(format!(
                    "{} is {w}x{h}, meta says {}x{}",
                    path.display(),
                    want.0,
                    want.1
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Reads the flow for ordered pair `(j, k)`, checking its size.
    pub fn flow(&self, j: usize, k: usize) -> Result<FlowField> {
        let path = flow_path(&self.dir, j, k);
        let flow = flow_read(&path)?;
        if (flow.width(), flow.height()) != (self.meta.width, self.meta.height) {
            return Err(Error::Shape(format!("{} has the wrong size", path.display())));
        }
        Ok(flow)
    }

    /// Frames and poses as a sequence, with stored depths as priors.
    pub fn to_sequence(&self, id: usize) -> Result<FrameSequence> {
        let frames = self
            .frames
            .iter()
            .zip(&self.poses)
            .zip(&self.depths)
            .map(|((image, pose), depth)| Frame {
                image: image.clone(),
                pose: *pose,
                prior_depth: depth.clone(),
                sparse_depth: None,
            })
            .collect();
        FrameSequence::new(id, frames)
    }
}

/// Writes frames, depths, flows, poses, optional scene and meta into `dir`.
pub fn write_sequence(
    dir: &Path,
    frames: &[ErpGrid],
    depths: &[DepthMap],
    flows: &[((usize, usize), FlowField)],
    poses: &[CameraPose],
    scene: Option<&Scene>,
    meta: &Meta,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (n, f) in frames.iter().enumerate() {
        png_write(&frame_path(dir, n), f)?;
    }
    for (n, d) in depths.iter().enumerate() {
        pfm_write(&depth_path(dir, n), d.grid())?;
    }
    for ((j, k), f) in flows {
        flow_write(&flow_path(dir, *j, *k), f)?;
    }
    let indexed: Vec<(usize, CameraPose)> = poses.iter().copied().enumerate().collect();
    poses_write(&dir.join(POSES_FILE), &indexed)?;
    if let Some(s) = scene {
        scene_write(&dir.join(SCENE_FILE), s)?;
    }
    meta.write(&dir.join(META_FILE))
}
