use std::ffi::{CStr, CString};
use std::ptr;

use meco::motion::{motion_io_save, MotionClip, Skeleton};
use meco_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(meco_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(meco_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_are_rejected() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { meco_motion_load(ptr::null(), &mut m) }, MecoStatus::NullPointer);
    assert!(m.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { meco_sampler_defaults(ptr::null_mut()) }, MecoStatus::NullPointer);
    assert_eq!(unsafe { meco_motion_frames(ptr::null()) }, 0);
    assert!(unsafe { meco_motion_data(ptr::null()) }.is_null());
    unsafe {
        meco_motion_free(ptr::null_mut());
        meco_generator_free(ptr::null_mut());
    }
}

#[test]
fn sampler_defaults() {
    let mut p = MecoSamplerParams { beta: 0.0, gamma: 0.0, seed: 9, top_k: 3, temperature: 2.0 };
    assert_eq!(unsafe { meco_sampler_defaults(&mut p) }, MecoStatus::Ok);
    assert_eq!((p.beta, p.gamma, p.top_k, p.temperature), (5.0, 0.9, 0, 0.0));
}

#[test]
fn motion_round_trip_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let sk = Skeleton::default();
    let dim = meco::motion::pose_dim(sk.joints());
    let data: Vec<f32> = (0..3 * dim).map(|i| (i % 7) as f32 * 0.25).collect();
    let src = dir.path().join("a.mecm");
    motion_io_save(&src, &MotionClip::new(sk, 30.0, data.clone()).unwrap()).unwrap();

    let path = CString::new(src.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { meco_motion_load(path.as_ptr(), &mut m) }, MecoStatus::Ok);
    assert_eq!(last_error(), "");
    unsafe {
        assert_eq!(meco_motion_frames(m), 3);
        assert_eq!(meco_motion_dim(m), dim);
        assert_eq!(meco_motion_frame_rate(m), 30.0);
        assert_eq!(std::slice::from_raw_parts(meco_motion_data(m), 3 * dim), &data[..]);
    }
    let copy = CString::new(dir.path().join("b.mecm").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { meco_motion_save(m, copy.as_ptr()) }, MecoStatus::Ok);
    unsafe { meco_motion_free(m) };
    assert_eq!(std::fs::read(&src).unwrap(), std::fs::read(dir.path().join("b.mecm")).unwrap());

    std::fs::write(&src, b"MECM").unwrap();
    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { meco_motion_load(path.as_ptr(), &mut bad) }, MecoStatus::Data);
    assert!(bad.is_null());
    assert!(last_error().contains("truncated"), "{}", last_error());
}

#[test]
fn beat_constancy_matches_kernel() {
    let g = [1.1f64];
    let a = [1.0f64, 3.0];
    let mut out = 0.0;
    assert_eq!(unsafe { meco_beat_constancy(g.as_ptr(), 1, a.as_ptr(), 2, 0.1, &mut out) }, MecoStatus::Ok);
    assert!((out - (-0.5f64).exp()).abs() < 1e-9);
    assert_eq!(unsafe { meco_beat_constancy(g.as_ptr(), 0, a.as_ptr(), 2, 0.1, &mut out) }, MecoStatus::Data);
}

#[test]
fn opening_a_missing_run_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut g = ptr::null_mut();
    let s = unsafe { meco_generator_open(p.as_ptr(), &mut g) };
    assert_eq!(s, MecoStatus::Data);
    assert!(g.is_null());
}

#[test]
fn header_declares_the_interface() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/meco.h")).unwrap();
    for name in [
        "typedef struct MecoGenerator MecoGenerator",
        "typedef struct MecoMotion MecoMotion",
        "MECO_STATUS_NULL_POINTER = 10",
        "MecoStatus meco_generate(",
        "const char *meco_last_error(void)",
        "void meco_motion_free(MecoMotion *m)",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
    let cc = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include/meco.h"))
        .output();
    if let Ok(out) = cc {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn generator_produces_motion_for_audio() {
    use meco::config::{Preset, RunConfig};
    use meco::lm::ModelConfig;
    use meco::pipeline::{Run, Step};

    let dir = tempfile::tempdir().unwrap();
    let mut c = RunConfig::preset(Preset::Test);
    c.data.clips = 6;
    c.data.test_clips = 2;
    c.data.min_duration = 4.5;
    c.data.max_duration = 5.0;
    c.data.kmeans_iterations = 3;
    c.codec.steps = 20;
    c.model = ModelConfig { d_model: 16, layers: 1, heads: 2, d_ff: 32, context: 512 };
    c.corpus_bytes = 8 * 1024;
    c.stage0.min_corpus_bytes = 8 * 1024;
    c.stage0.max_epochs = 1;
    c.stage0.seq_len = 64;
    for s in [&mut c.stage1, &mut c.stage2, &mut c.stage3] {
        s.epochs = 1;
    }
    let mut run = Run::open(dir.path(), c).unwrap();
    run.run_all(Some(Step::Stage(3)), &mut |_| {}).unwrap();
    let example = run.data_path("motion/sample_00000.mecm");

    let root = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { meco_generator_open(root.as_ptr(), &mut g) }, MecoStatus::Ok, "{}", last_error());
    let audio: Vec<f32> = (0..48_000).map(|i| (i as f32 * 0.05).sin() * 0.3).collect();
    let ex = CString::new(example.to_str().unwrap()).unwrap();
    let mut p = MecoSamplerParams { beta: 0.0, gamma: 0.0, seed: 0, top_k: 0, temperature: 0.0 };
    unsafe { meco_sampler_defaults(&mut p) };
    p.top_k = 4;
    p.temperature = 1.0;
    let mut m = ptr::null_mut();
    let s = unsafe { meco_generate(g, audio.as_ptr(), audio.len(), 16_000, ex.as_ptr(), &p, &mut m) };
    assert_eq!(s, MecoStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { meco_motion_frames(m) }, 90);
    let data = unsafe { std::slice::from_raw_parts(meco_motion_data(m), 90 * meco_motion_dim(m)) };
    assert!(data.iter().all(|v| v.is_finite()));

    p.gamma = 1.5;
    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { meco_generate(g, audio.as_ptr(), audio.len(), 16_000, ptr::null(), &p, &mut bad) }, MecoStatus::Config);
    unsafe {
        meco_motion_free(m);
        meco_generator_free(g);
    }
}
