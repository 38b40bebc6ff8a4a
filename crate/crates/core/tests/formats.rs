use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};

use omnidepth::alignment::CameraPose;
use omnidepth::io::{
    flow_decode, flow_encode, flow_read, flow_write, pfm_decode, pfm_encode, pfm_read, pfm_write, poses_read,
    poses_write, scene_read, write_sequence, Manifest, Meta,
};
use omnidepth::sphere::{RotationMatrix, Vec3};
use omnidepth::synth::make_benchmark_sequence;
use omnidepth::temporal::FlowField;
use omnidepth::{ErpGrid, Error};
use proptest::prelude::*;

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

#[test]
fn golden_pfm_files_decode_and_re_encode() {
    let tall = ErpGrid::from_vec(1, 2, 1, vec![1.0, 2.0]).unwrap();
    let wide = ErpGrid::from_vec(3, 2, 1, vec![0.5, 1.25, 3.0, 10.0, 0.125, 7.75]).unwrap();
    for (name, grid) in [("depth_1x2.pfm", tall), ("depth_3x2.pfm", wide)] {
        let bytes = std::fs::read(golden(name)).unwrap();
        assert_eq!(pfm_read(&golden(name)).unwrap(), grid, "{name}");
        assert_eq!(pfm_encode(&grid).unwrap(), bytes, "{name}");
    }
}

#[test]
fn golden_flow_file_decodes_and_re_encodes() {
    let data = vec![0.5, -0.25, 1.0, 0.0, -2.5, 0.75, 0.0, 0.0, 3.0, -1.0, 0.125, 0.5];
    let flow = FlowField::new(ErpGrid::from_vec(3, 2, 2, data).unwrap()).unwrap();
    let path = golden("flow_3x2.oflo");
    assert_eq!(flow_read(&path).unwrap(), flow);
    assert_eq!(flow_encode(&flow).unwrap(), std::fs::read(&path).unwrap());
}

#[test]
fn golden_poses_parse() {
    let poses = poses_read(&golden("poses.txt")).unwrap();
    assert_eq!(poses.len(), 3);
    assert_eq!(poses[0], (0, CameraPose::identity()));
    assert_eq!(poses[1].1.translation, Vec3::new(0.0, 0.0, 0.25));
    let expected = RotationMatrix::about_y(FRAC_PI_2);
    let diff = (poses[2].1.rotation().matrix() - expected.matrix()).abs().max();
    assert!(diff < 1e-15, "{diff}");
    assert_eq!(poses[2].1.translation, Vec3::new(1.5, -0.5, 0.5));
}

#[test]
fn malformed_golden_files_are_rejected_with_named_errors() {
    let pfm_cases = [
        ("bad_magic.pfm", 0, "bad magic"),
        ("three_channel.pfm", 0, "three-channel"),
        ("big_endian.pfm", 7, "big-endian"),
        ("truncated.pfm", 25, "truncated payload"),
        ("trailing.pfm", 16, "trailing"),
        ("bad_dims.pfm", 3, "bad dimensions"),
        ("no_header_end.pfm", 3, "unterminated"),
    ];
    for (name, want_offset, want) in pfm_cases {
        match pfm_read(&golden(name)) {
            Err(Error::Parse { file, offset, message }) => {
                assert!(file.ends_with(name), "{file}");
                assert_eq!(offset, want_offset, "{name}: {message}");
                assert!(message.contains(want), "{name}: {message}");
            }
            other => panic!("{name}: {other:?}"),
        }
    }
    let flow_cases = [
        ("bad_magic.oflo", "bad magic"),
        ("short.oflo", "expected 44 bytes for 2x2, found 40"),
        ("header_only.oflo", "truncated header"),
    ];
    for (name, want) in flow_cases {
        match flow_read(&golden(name)) {
            Err(Error::Parse { file, message, .. }) => {
                assert!(file.ends_with(name));
                assert!(message.contains(want), "{name}: {message}");
            }
            other => panic!("{name}: {other:?}"),
        }
    }
    let text_cases = [
        ("poses_nonunit.txt", "quaternion norm"),
        ("poses_duplicate.txt", "duplicate frame index 1"),
        ("poses_token.txt", "invalid number `zero`"),
        ("poses_fields.txt", "expected 8 fields"),
    ];
    for (name, want) in text_cases {
        match poses_read(&golden(name)) {
            Err(Error::Parse { message, .. }) => assert!(message.contains(want), "{name}: {message}"),
            other => panic!("{name}: {other:?}"),
        }
    }
    for name in ["scene_unknown.txt", "scene_two_skies.txt"] {
        assert!(matches!(scene_read(&golden(name)), Err(Error::Parse { .. })), "{name}");
    }
}

#[test]
fn duplicate_pose_offset_points_at_second_line() {
    match poses_read(&golden("poses_duplicate.txt")) {
        Err(Error::Parse { offset, .. }) => assert_eq!(offset, "0 0 0 0 0 0 0 1\n1 0 0 1 0 0 0 1\n".len()),
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_file_is_an_io_error() {
    let err = pfm_read(Path::new("/nonexistent/depth.pfm")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("/nonexistent/depth.pfm"));
}

proptest! {
    #[test]
    fn pfm_round_trip_is_bit_exact(w in 1usize..9, h in 1usize..9, seed in prop::collection::vec(any::<f32>(), 64)) {
        let data: Vec<f64> = (0..w * h).map(|n| seed[n % 64] as f64).collect();
        let grid = ErpGrid::from_vec(w, h, 1, data).unwrap();
        let bytes = pfm_encode(&grid).unwrap();
        let back = pfm_decode(&bytes, "mem").unwrap();
        prop_assert_eq!(pfm_encode(&back).unwrap(), bytes);
        for (a, b) in back.data().iter().zip(grid.data()) {
            prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
    }

    #[test]
    fn flow_round_trip_is_bit_exact(w in 1usize..9, h in 1usize..9, seed in prop::collection::vec(-1.0f32..1.0, 128)) {
        let data: Vec<f64> = (0..2 * w * h).map(|n| seed[n % 128] as f64).collect();
        let flow = FlowField::new(ErpGrid::from_vec(w, h, 2, data).unwrap()).unwrap();
        let bytes = flow_encode(&flow).unwrap();
        prop_assert_eq!(bytes.len(), 12 + 8 * w * h);
        prop_assert_eq!(flow_decode(&bytes, "mem").unwrap(), flow);
    }

    #[test]
    fn poses_round_trip_exactly(
        t in prop::collection::vec(-1e3f64..1e3, 3),
        axis in prop::collection::vec(-1.0f64..1.0, 3),
        angle in -3.1f64..3.1,
    ) {
        let axis = Vec3::new(axis[0], axis[1], axis[2]);
        prop_assume!(axis.norm() > 1e-3);
        let pose = CameraPose::new(RotationMatrix::about_axis(&axis, angle), Vec3::new(t[0], t[1], t[2]));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poses.txt");
        poses_write(&path, &[(0, pose), (7, CameraPose::identity())]).unwrap();
        let back = poses_read(&path).unwrap();
        prop_assert_eq!(back[0], (0, pose));
        prop_assert_eq!(back[1], (7, CameraPose::identity()));
        let path2 = dir.path().join("again.txt");
        poses_write(&path2, &back).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let grid = ErpGrid::from_vec(2, 2, 1, vec![1.5, f32::MAX as f64, 1e-30f32 as f64, 4.0]).unwrap();
    let path = dir.path().join("d.pfm");
    pfm_write(&path, &grid).unwrap();
    assert_eq!(pfm_read(&path).unwrap(), grid);
    let flow = FlowField::new(ErpGrid::from_vec(2, 1, 2, vec![0.25, -0.5, 2.0, 0.0]).unwrap()).unwrap();
    let fpath = dir.path().join("f.oflo");
    flow_write(&fpath, &flow).unwrap();
    assert_eq!(flow_read(&fpath).unwrap(), flow);
}

#[test]
fn rendered_sequence_loads_back_without_errors() {
    let b = make_benchmark_sequence(7, 3, 32, 16).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let meta = Meta::new(32, 16, b.baseline, 1.0);
    write_sequence(dir.path(), &b.frames, &b.depths, &b.flows, &b.poses, Some(&b.scene), &meta).unwrap();
    let m = Manifest::load(dir.path()).unwrap();
    assert_eq!(m.len(), 3);
    assert_eq!(m.meta, meta);
    assert_eq!(m.poses, b.poses);
    // Depth is stored as f32.
    for (got, want) in m.depths.iter().zip(&b.depths) {
        let got = got.as_ref().unwrap();
        for (a, w) in got.values().iter().zip(want.values()) {
            assert_eq!(*a, *w as f32 as f64);
        }
    }
    // Color is quantized to 8 bits.
    for (got, want) in m.frames.iter().zip(&b.frames) {
        for (a, w) in got.data().iter().zip(want.data()) {
            assert!((a - w).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
    assert_eq!(m.scene.as_ref().unwrap().primitives(), b.scene.primitives());
    for ((j, k), f) in &b.flows {
        let loaded = m.flow(*j, *k).unwrap();
        for (a, w) in loaded.grid().data().iter().zip(f.grid().data()) {
            assert_eq!(*a, *w as f32 as f64);
        }
    }
    assert!(m.flow(2, 2).is_err());
    m.to_sequence(0).unwrap();
}
