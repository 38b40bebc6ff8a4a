use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use omnidepth::alignment::{alignment_rotation, CameraPose, Frame, FrameSequence};
use omnidepth::disparity::DepthMap;
use omnidepth::io::{
    depth_path, depth_read, flow_path, pfm_read, pfm_write, png_read, png_write, scene_read, write_sequence, Manifest,
    Meta,
};
use omnidepth::objectives::{depth_metrics, MetricReport};
use omnidepth::optimizer::{combined_loss, optimize_sequence, OptimizeConfig, TraceEntry};
use omnidepth::sphere::{
    cubemap_to_erp, erp_pixel_to_dir, erp_to_cubemap, rotate_erp, vector_to_erp_pixel, wrap_pixel_offset,
    RotationMatrix, Vec3,
};
use omnidepth::synth::{benchmark_baseline, linear_trajectory, make_benchmark_sequence, render_benchmark, render_erp};
use omnidepth::temporal::{FlowField, PairPolicy};
use omnidepth::{CubemapGrid, ErpGrid, Error, Face, Result};
use rayon::prelude::*;

use crate::{
    AdjustArgs, Cli, Command, ConvertArgs, EvalArgs, GlobalOpts, LossArgs, LossOpts, OptimizeArgs, Projection,
    RenderArgs,
};

const DEFAULT_WIDTH: usize = 512;
const DEFAULT_HEIGHT: usize = 256;

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Render(a) => render(g, a),
        Command::Adjust(a) => adjust(a),
        Command::Loss(a) => loss(g, a),
        Command::Optimize(a) => optimize(g, a),
        Command::Eval(a) => eval(a),
        Command::Convert(a) => convert(g, a),
    }
}

fn paths(list: &[PathBuf]) -> String {
    if list.is_empty() {
        return "-".into();
    }
    list.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",")
}

fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".into(), |v| v.to_string())
}

fn pair_text(pair: Option<&[usize]>) -> String {
    pair.map_or_else(|| "-".into(), |p| format!("{},{}", p[0], p[1]))
}

fn policy_name(p: PairPolicy) -> &'static str {
    match p {
        PairPolicy::Consecutive => "consecutive",
        PairPolicy::ConsecutiveAndEnds => "consecutive_and_ends",
        PairPolicy::All => "all",
    }
}

/// One line describing the effective configuration.
pub fn config_echo(cli: &Cli) -> String {
    let g = &cli.global;
    let common = format!(
        "width={} height={} seed={} threads={} weight_mode={}",
        opt(&g.width),
        opt(&g.height),
        g.seed,
        g.threads,
        g.weight_mode
    );
    let specific = match &cli.command {
        Command::Render(a) => format!(
            "render {common} scene={} frames={} out={}",
            a.scene.as_ref().map_or("-".into(), |p| p.display().to_string()),
            a.frames,
            a.out.display()
        ),
        Command::Adjust(a) => format!(
            "adjust {common} in={} pair={} out={} max_vertical_ratio={}",
            a.input.display(),
            pair_text(Some(&a.pair)),
            a.out.display(),
            a.max_vertical_ratio
        ),
        Command::Loss(a) => format!(
            "loss {common} in={} geometric={} temporal={} pair={} depth={} pairs={} min_coverage={}",
            a.input.display(),
            a.geometric,
            a.temporal,
            pair_text(a.pair.as_deref()),
            paths(&a.depth),
            policy_name(a.opts.pairs),
            a.opts.min_coverage
        ),
        Command::Optimize(a) => format!(
            "optimize {common} in={} init={} epochs={} out={} update={} step_size={} downsample={} \
             geometric_weight={} temporal_weight={} depth_range=[{}, {}] pairs={} min_coverage={}",
            a.input.display(),
            paths(&a.init),
            a.epochs,
            a.out.display(),
            a.update,
            a.step_size,
            a.downsample,
            a.geometric_weight,
            a.temporal_weight,
            a.depth_min,
            a.depth_max,
            policy_name(a.opts.pairs),
            a.opts.min_coverage
        ),
        Command::Eval(a) => format!(
            "eval {common} pred={} gt={} mask={} append={}",
            paths(&a.pred),
            paths(&a.gt),
            paths(&a.mask),
            a.append.as_ref().map_or("-".into(), |p| p.display().to_string())
        ),
        Command::Convert(a) => format!(
            "convert {common} in={} out={} to={} face_size={}",
            a.input.display(),
            a.out.display(),
            match a.to {
                Projection::Cubemap => "cubemap",
                Projection::Erp => "erp",
            },
            opt(&a.face_size)
        ),
    };
    format!("omnidepth {specific}")
}

// ---------------------------------------------------------------- render

fn render(g: &GlobalOpts, a: &RenderArgs) -> Result<()> {
    let (w, h) = (g.width.unwrap_or(DEFAULT_WIDTH), g.height.unwrap_or(DEFAULT_HEIGHT));
    let bench = match &a.scene {
        None => make_benchmark_sequence(g.seed, a.frames, w, h)?,
        Some(path) => {
            let scene = scene_read(path)?;
            if a.frames < 2 {
                return Err(Error::Config(format!("a sequence needs at least 2 frames, got {}", a.frames)));
            }
            let (_, first) = render_erp(&scene, &CameraPose::identity(), w, h)?;
            let b = benchmark_baseline(&first);
            render_benchmark(scene, linear_trajectory(Vec3::zeros(), a.frames, b), b, w, h)?
        }
    };
    let mut meta = Meta::new(w, h, bench.baseline, 1.0);
    if a.scene.is_none() {
        meta.set("seed", g.seed.to_string());
    }
    write_sequence(
        &a.out,
        &bench.frames,
        &bench.depths,
        &bench.flows,
        &bench.poses,
        Some(&bench.scene),
        &meta,
    )?;
    println!(
        "rendered {} frames at {w}x{h}, baseline {:.6} m, {} flows -> {}",
        bench.frames.len(),
        bench.baseline,
        bench.flows.len(),
        a.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- adjust

fn is_identity(r: &RotationMatrix) -> bool {
    *r == RotationMatrix::identity()
}

/// Re-expresses flow from frame `j` to `k` in cameras rotated by `rj` and
/// `rk` respectively (content at `d` moves to `R·d`).
fn rotate_flow(flow: &FlowField, rj: &RotationMatrix, rk: &RotationMatrix) -> Result<FlowField> {
    let (w, h) = (flow.width(), flow.height());
    let (wf, hf) = (w as f64, h as f64);
    let inv_j = rj.transpose();
    let mut data = vec![0.0; 2 * w * h];
    data.par_chunks_mut(2 * w).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
            let d = erp_pixel_to_dir(u, v, w, h).expect("pixel center").to_vector();
            let (us, vs) = vector_to_erp_pixel(&inv_j.apply(&d), w, h);
            let mut f = [0.0; 2];
            flow.grid().sample_into(us, vs, &mut f);
            let ut = (us + f[0]).rem_euclid(wf);
            let vt = (vs + f[1]).clamp(0.0, hf);
            let dk = erp_pixel_to_dir(ut, vt, w, h).expect("wrapped and clamped").to_vector();
            let (u2, v2) = vector_to_erp_pixel(&rk.apply(&dk), w, h);
            row[2 * x] = wrap_pixel_offset(u2 - u, w);
            row[2 * x + 1] = v2 - v;
        }
    });
    FlowField::new(ErpGrid::from_vec(w, h, 2, data)?)
}

fn adjust(a: &AdjustArgs) -> Result<()> {
    let (j, k) = (a.pair[0], a.pair[1]);
    let m = Manifest::load(&a.input)?;
    for n in [j, k] {
        if n >= m.len() {
            return Err(Error::Config(format!("frame {n} not in sequence of {} frames", m.len())));
        }
    }
    if j == k {
        return Err(Error::Config(format!("pair ({j}, {k}) names the same frame twice")));
    }
    let (align, baseline) = alignment_rotation(&m.poses[j], &m.poses[k], a.max_vertical_ratio)?;
    let rj = align.compose(&m.poses[j].rotation());
    let rk = align.compose(&m.poses[k].rotation());

    let frames = vec![rotate_erp(&m.frames[j], &rj), rotate_erp(&m.frames[k], &rk)];
    let depths = match (&m.depths[j], &m.depths[k]) {
        (Some(dj), Some(dk)) => vec![
            DepthMap::new(rotate_erp(dj.grid(), &rj))?,
            DepthMap::new(rotate_erp(dk.grid(), &rk))?,
        ],
        _ => Vec::new(),
    };
    let identity = is_identity(&rj) && is_identity(&rk);
    let mut flows = Vec::new();
    for ((s, t), (from, to), (rs, rt)) in [((j, k), (0, 1), (&rj, &rk)), ((k, j), (1, 0), (&rk, &rj))] {
        if !flow_path(&m.dir, s, t).exists() {
            continue;
        }
        let f = m.flow(s, t)?;
        let f = if identity { f } else { rotate_flow(&f, rs, rt)? };
        flows.push(((from, to), f));
    }
    let poses = [CameraPose::identity(), CameraPose::at(Vec3::new(0.0, 0.0, baseline))];
    let mut meta = Meta::new(m.meta.width, m.meta.height, baseline, m.meta.scale);
    meta.set("source_pair", format!("{j} {k}"));
    write_sequence(&a.out, &frames, &depths, &flows, &poses, None, &meta)?;

    let angle = |r: &RotationMatrix| r.to_quaternion().angle().to_degrees();
    if identity {
        println!("pair ({j}, {k}): identity rotation, baseline {baseline:.6} m");
    } else {
        println!(
            "pair ({j}, {k}): rotated frame {j} by {:.6} deg and frame {k} by {:.6} deg, baseline {baseline:.6} m",
            angle(&rj),
            angle(&rk)
        );
    }
    Ok(())
}

// ---------------------------------------------------------------- loss / optimize

fn depth_inputs(m: &Manifest, files: &[PathBuf]) -> Result<Vec<DepthMap>> {
    if files.is_empty() {
        return m
            .depths
            .iter()
            .enumerate()
            .map(|(n, d)| {
                d.clone().ok_or_else(|| {
                    Error::Config(format!("{} is missing; pass depth maps explicitly", depth_path(&m.dir, n).display()))
                })
            })
            .collect();
    }
    if files.len() != m.len() {
        return Err(Error::Config(format!(
            "{} depth maps given for {} frames",
            files.len(),
            m.len()
        )));
    }
    files
        .iter()
        .map(|p| {
            let d = depth_read(p)?;
            if (d.width(), d.height()) != (m.meta.width, m.meta.height) {
                return Err(Error::Shape(format!(
                    "{} is {}x{}, sequence is {}x{}",
                    p.display(),
                    d.width(),
                    d.height(),
                    m.meta.width,
                    m.meta.height
                )));
            }
            Ok(d)
        })
        .collect()
}

/// The sequence, its depths and the flows needed by `cfg`, optionally
/// narrowed to one frame pair. Also returns the original frame indices.
struct Problem {
    seq: FrameSequence,
    depths: Vec<DepthMap>,
    flows: Vec<((usize, usize), FlowField)>,
    index: Vec<usize>,
}

fn load_problem(
    dir: &Path,
    depth_files: &[PathBuf],
    pair: Option<(usize, usize)>,
    cfg: &OptimizeConfig,
) -> Result<Problem> {
    let m = Manifest::load(dir)?;
    let depths = depth_inputs(&m, depth_files)?;
    let index: Vec<usize> = match pair {
        Some((j, k)) => {
            if j >= m.len() || k >= m.len() || j == k {
                return Err(Error::Config(format!("invalid pair ({j}, {k}) for {} frames", m.len())));
            }
            vec![j, k]
        }
        None => (0..m.len()).collect(),
    };
    let frames = index
        .iter()
        .map(|&n| Frame {
            image: m.frames[n].clone(),
            pose: m.poses[n],
            prior_depth: None,
            sparse_depth: None,
        })
        .collect();
    let seq = FrameSequence::new(0, frames)?;
    let depths = index.iter().map(|&n| depths[n].clone()).collect();
    let mut flows = Vec::new();
    if cfg.temporal_weight > 0.0 {
        for (a, b) in cfg.pair_policy.pairs(index.len()) {
            flows.push(((a, b), m.flow(index[a], index[b])?));
        }
    }
    Ok(Problem {
        seq,
        depths,
        flows,
        index,
    })
}

fn base_config(g: &GlobalOpts, o: &LossOpts, pair: bool) -> OptimizeConfig {
    OptimizeConfig {
        pair_policy: if pair { PairPolicy::Consecutive } else { o.pairs },
        min_coverage: o.min_coverage,
        skip_insufficient: o.skip_insufficient,
        weight_mode: g.weight_mode,
        ..OptimizeConfig::default()
    }
}

fn loss(g: &GlobalOpts, a: &LossArgs) -> Result<()> {
    let (geo, tem) = match (a.geometric, a.temporal) {
        (false, false) => (true, true),
        other => other,
    };
    let pair = a.pair.as_ref().map(|p| (p[0], p[1]));
    let cfg = OptimizeConfig {
        geometric_weight: if geo { 1.0 } else { 0.0 },
        temporal_weight: if tem { 1.0 } else { 0.0 },
        // Scoring only: accept any positive depth.
        depth_min: f64::MIN_POSITIVE,
        depth_max: f64::MAX,
        downsample: 1,
        ..base_config(g, &a.opts, pair.is_some())
    };
    cfg.validate()?;
    let p = load_problem(&a.input, &a.depth, pair, &cfg)?;
    let l = combined_loss(&p.seq, &p.flows, &cfg.params(p.depths)?, &cfg)?;
    for pl in &l.pairs {
        let (j, k) = (p.index[pl.source], p.index[pl.target]);
        let mut line = format!("pair {j} {k} baseline {:.6}", pl.baseline);
        if geo {
            if pl.skipped {
                line.push_str(" geometric skipped");
            } else {
                line.push_str(&format!(" geometric {:.9e}", pl.geometric));
            }
        }
        if tem {
            line.push_str(&format!(" temporal {:.9e}", pl.temporal));
        }
        println!("{line}");
    }
    println!("total geometric {:.9e} temporal {:.9e} total {:.9e}", l.geometric, l.temporal, l.total);
    Ok(())
}

fn format_trace(trace: &[TraceEntry]) -> String {
    let mut s = String::from("# epoch geometric temporal total\n");
    for t in trace {
        s.push_str(&format!("{} {:.17e} {:.17e} {:.17e}\n", t.epoch, t.geometric, t.temporal, t.total));
    }
    s
}

pub const TRACE_FILE: &str = "trace.txt";

fn optimize(g: &GlobalOpts, a: &OptimizeArgs) -> Result<()> {
    let cfg = OptimizeConfig {
        epochs: a.epochs,
        step_size: a.step_size,
        update: a.update,
        downsample: a.downsample,
        geometric_weight: a.geometric_weight,
        temporal_weight: a.temporal_weight,
        depth_min: a.depth_min,
        depth_max: a.depth_max,
        ..base_config(g, &a.opts, false)
    };
    cfg.validate()?;
    let p = load_problem(&a.input, &a.init, None, &cfg)?;
    let result = optimize_sequence(&p.seq, &p.flows, cfg.params(p.depths)?, &cfg)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    for (n, d) in result.depths().iter().enumerate() {
        pfm_write(&depth_path(&a.out, n), d.grid())?;
    }
    let trace_path = a.out.join(TRACE_FILE);
    fs::write(&trace_path, format_trace(&result.trace)).map_err(|e| Error::Io {
        path: trace_path.clone(),
        source: e,
    })?;
    let (first, last) = (&result.trace[0], result.trace.last().expect("trace has the initial entry"));
    if last.step_scale == 0.0 {
        warn!("no step lowered the loss in the last epoch");
    }
    println!(
        "optimized {} frames for {} epochs: total {:.9e} -> {:.9e}",
        p.seq.len(),
        a.epochs,
        first.total,
        last.total
    );
    info!("wrote {} depth maps and {}", p.seq.len(), trace_path.display());
    Ok(())
}

// ---------------------------------------------------------------- eval

fn read_mask(path: &Path) -> Result<Vec<bool>> {
    let g = pfm_read(path)?;
    g.validate_finite()?;
    Ok(g.data().iter().map(|&v| v != 0.0).collect())
}

fn eval(a: &EvalArgs) -> Result<()> {
    if a.pred.len() != a.gt.len() {
        return Err(Error::Config(format!(
            "{} predictions for {} ground-truth maps",
            a.pred.len(),
            a.gt.len()
        )));
    }
    if !a.mask.is_empty() && a.mask.len() != a.pred.len() {
        return Err(Error::Config(format!("{} masks for {} predictions", a.mask.len(), a.pred.len())));
    }
    let mut rows = Vec::with_capacity(a.pred.len());
    for (n, (p, t)) in a.pred.iter().zip(&a.gt).enumerate() {
        let (pred, gt) = (depth_read(p)?, depth_read(t)?);
        let mask = a.mask.get(n).map(|m| read_mask(m)).transpose()?;
        let report = depth_metrics(&pred, &gt, mask.as_deref())?;
        info!("{}: {report}", p.display());
        rows.push(report.table_row());
    }
    println!("{}", MetricReport::HEADER);
    for r in &rows {
        println!("{r}");
    }
    if let Some(path) = &a.append {
        let io_err = |e| Error::Io {
            path: path.clone(),
            source: e,
        };
        let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io_err)?;
        let mut text = String::new();
        if fresh {
            text.push_str(MetricReport::HEADER);
            text.push('\n');
        }
        for r in &rows {
            text.push_str(r);
            text.push('\n');
        }
        f.write_all(text.as_bytes()).map_err(io_err)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- convert

#[derive(Clone, Copy, PartialEq, Eq)]
enum ImageKind {
    Png,
    Pfm,
}

fn image_kind(path: &Path) -> Result<ImageKind> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => Ok(ImageKind::Png),
        Some("pfm") => Ok(ImageKind::Pfm),
        _ => Err(Error::Config(format!("{}: expected a .png or .pfm file", path.display()))),
    }
}

fn read_image(path: &Path) -> Result<ErpGrid> {
    let g = match image_kind(path)? {
        ImageKind::Png => png_read(path)?,
        ImageKind::Pfm => pfm_read(path)?,
    };
    g.validate_finite()?;
    Ok(g)
}

fn write_image(path: &Path, grid: &ErpGrid) -> Result<()> {
    match image_kind(path)? {
        ImageKind::Png => png_write(path, grid),
        ImageKind::Pfm => pfm_write(path, grid),
    }
}

/// Faces side by side in storage order `+x −x +y −y +z −z`.
fn cubemap_to_strip(cm: &CubemapGrid) -> ErpGrid {
    let (f, ch) = (cm.face_size(), cm.channels());
    ErpGrid::from_fn(6 * f, f, ch, |x, y, out| {
        let face = Face::from_index(x / f);
        for (c, o) in out.iter_mut().enumerate() {
            *o = cm.get(face, x % f, y, c);
        }
    })
}

fn strip_to_cubemap(strip: &ErpGrid, path: &Path) -> Result<CubemapGrid> {
    let (w, f, ch) = (strip.width(), strip.height(), strip.channels());
    if w != 6 * f {
        return Err(Error::Shape(format!(
            "{} is {w}x{f}; a cubemap strip must be 6F x F",
            path.display()
        )));
    }
    let faces = (0..6)
        .map(|n| {
            (0..f)
                .flat_map(|y| (0..f).flat_map(move |x| (0..ch).map(move |c| (n * f + x, y, c))))
                .map(|(x, y, c)| strip.get(x, y, c))
                .collect()
        })
        .collect();
    CubemapGrid::from_faces(f, ch, faces)
}

fn convert(g: &GlobalOpts, a: &ConvertArgs) -> Result<()> {
    let input = read_image(&a.input)?;
    let out = match a.to {
        Projection::Cubemap => {
            let f = a.face_size.unwrap_or(input.width() / 4);
            cubemap_to_strip(&erp_to_cubemap(&input, f)?)
        }
        Projection::Erp => {
            let cm = strip_to_cubemap(&input, &a.input)?;
            let f = cm.face_size();
            cubemap_to_erp(&cm, g.width.unwrap_or(4 * f), g.height.unwrap_or(2 * f))
        }
    };
    write_image(&a.out, &out)?;
    println!(
        "{}x{} -> {}x{} {}",
        input.width(),
        input.height(),
        out.width(),
        out.height(),
        a.out.display()
    );
    Ok(())
}
