//! C interface to the gesture generator.
//!
//! Every fallible call returns a [`MecoStatus`]; on failure the message is
//! available from [`meco_last_error`] until the next call on the same thread.
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use meco::audio::{UnitCodebook, Waveform};
use meco::config::RunConfig;
use meco::lm::{load_model, SeqModel};
use meco::metrics::beat_constancy;
use meco::motion::{motion_io_load, motion_io_save, MotionClip};
use meco::rvq::{tokenize_motion, PartCodecs};
use meco::sampler::{generate_long, SamplerConfig, SamplingMode};
use meco::train::ExamplePrompt;
use meco::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MecoStatus {
    Ok = 0,
    Config = 2,
    Data = 3,
    Numeric = 4,
    NullPointer = 10,
    InvalidUtf8 = 11,
    Panic = 12,
}

/// Sampling controls. `top_k == 0` with `temperature <= 0` decodes greedily;
/// `top_k == 0` with a positive temperature samples the full distribution.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MecoSamplerParams {
    pub beta: f64,
    pub gamma: f64,
    pub seed: u64,
    pub top_k: u32,
    pub temperature: f64,
}

/// A trained model with its codecs and audio units.
pub struct MecoGenerator {
    config: RunConfig,
    model: SeqModel,
    codecs: PartCodecs,
    units: UnitCodebook,
}

/// A motion clip: `frames` rows of `dim` floats.
pub struct MecoMotion {
    clip: MotionClip,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> MecoStatus {
    match e.exit_code() {
        2 => MecoStatus::Config,
        4 => MecoStatus::Numeric,
        _ => MecoStatus::Data,
    }
}

fn guard(f: impl FnOnce() -> Result<(), MecoStatus>) -> MecoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MecoStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            MecoStatus::Panic
        }
    }
}

fn fail(e: Error) -> MecoStatus {
    set_error(&e.to_string());
    status_of(&e)
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, MecoStatus> {
    if p.is_null() {
        set_error("null path");
        return Err(MecoStatus::NullPointer);
    }
    match unsafe { CStr::from_ptr(p) }.to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(MecoStatus::InvalidUtf8)
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), MecoStatus> {
    if p.is_null() {
        set_error(&format!("null {what}"));
        return Err(MecoStatus::NullPointer);
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn meco_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread; empty after a success.
#[no_mangle]
pub extern "C" fn meco_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Fills `out` with the configured defaults (beta 5, gamma 0.9, greedy).
///
/// # Safety
/// `out` must be null or point to writable memory for one struct.
#[no_mangle]
pub unsafe extern "C" fn meco_sampler_defaults(out: *mut MecoSamplerParams) -> MecoStatus {
    guard(|| {
        non_null(out, "output")?;
        let d = SamplerConfig::default();
        unsafe { *out = MecoSamplerParams { beta: d.beta, gamma: d.gamma, seed: d.seed, top_k: 0, temperature: 0.0 } };
        Ok(())
    })
}

fn load_generator(dir: &Path) -> meco::Result<MecoGenerator> {
    let config = RunConfig::load(&dir.join("config.toml"))?;
    let ckpt = dir.join(&config.paths.checkpoints);
    Ok(MecoGenerator {
        model: load_model(&ckpt.join("stage3.mecl"))?,
        codecs: PartCodecs::load_dir(&ckpt.join("codec"))?,
        units: UnitCodebook::load(&ckpt.join("units.meca"))?,
        config,
    })
}

/// Opens the trained artifacts of a run directory.
///
/// # Safety
/// `run_dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn meco_generator_open(run_dir: *const c_char, out: *mut *mut MecoGenerator) -> MecoStatus {
    guard(|| {
        non_null(out, "output")?;
        unsafe { *out = ptr::null_mut() };
        let dir = unsafe { path_arg(run_dir) }?;
        let g = load_generator(&dir).map_err(fail)?;
        unsafe { *out = Box::into_raw(Box::new(g)) };
        Ok(())
    })
}

/// # Safety
/// `g` must be null or a handle from `meco_generator_open` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn meco_generator_free(g: *mut MecoGenerator) {
    if !g.is_null() {
        drop(unsafe { Box::from_raw(g) });
    }
}

fn sampler_config(p: &MecoSamplerParams) -> SamplerConfig {
    let mode = match (p.top_k, p.temperature > 0.0) {
        (0, false) => SamplingMode::Greedy,
        (0, true) => SamplingMode::Temperature { temperature: p.temperature },
        (k, _) => SamplingMode::TopK { k: k as usize, temperature: if p.temperature > 0.0 { p.temperature } else { 1.0 } },
    };
    SamplerConfig { beta: p.beta, gamma: p.gamma, seed: p.seed, mode, dedup_examples: true }
}

/// Generates motion for mono audio. `example_path` may be null for no example.
///
/// # Safety
/// `g` must be a live generator; `samples` must hold `n_samples` floats;
/// `params` must be null (defaults) or valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn meco_generate(
    g: *const MecoGenerator,
    samples: *const f32,
    n_samples: usize,
    sample_rate: u32,
    example_path: *const c_char,
    params: *const MecoSamplerParams,
    out: *mut *mut MecoMotion,
) -> MecoStatus {
    guard(|| {
        non_null(out, "output")?;
        unsafe { *out = ptr::null_mut() };
        non_null(g, "generator")?;
        non_null(samples, "samples")?;
        let g = unsafe { &*g };
        let wave = Waveform { samples: unsafe { std::slice::from_raw_parts(samples, n_samples) }.to_vec(), sample_rate };
        let example = if example_path.is_null() {
            ExamplePrompt::empty()
        } else {
            let path = unsafe { path_arg(example_path) }?;
            let clip = motion_io_load(&path).map_err(fail)?;
            ExamplePrompt::from_codes(&tokenize_motion(&clip, &g.codecs).map_err(fail)?, true)
        };
        let cfg = if params.is_null() { g.config.sampler } else { sampler_config(unsafe { &*params }) };
        let d = &g.config.data;
        let res = generate_long(&g.model, &g.codecs, &g.units, &wave, &example, None, d.skeleton, d.frame_rate, &cfg).map_err(fail)?;
        unsafe { *out = Box::into_raw(Box::new(MecoMotion { clip: res.clip })) };
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn meco_motion_load(path: *const c_char, out: *mut *mut MecoMotion) -> MecoStatus {
    guard(|| {
        non_null(out, "output")?;
        unsafe { *out = ptr::null_mut() };
        let path = unsafe { path_arg(path) }?;
        let clip = motion_io_load(&path).map_err(fail)?;
        unsafe { *out = Box::into_raw(Box::new(MecoMotion { clip })) };
        Ok(())
    })
}

/// # Safety
/// `m` must be a live motion handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn meco_motion_save(m: *const MecoMotion, path: *const c_char) -> MecoStatus {
    guard(|| {
        non_null(m, "motion")?;
        let path = unsafe { path_arg(path) }?;
        motion_io_save(&path, unsafe { &(*m).clip }).map_err(fail)
    })
}

/// Frame count, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live motion handle.
#[no_mangle]
pub unsafe extern "C" fn meco_motion_frames(m: *const MecoMotion) -> usize {
    if m.is_null() { 0 } else { unsafe { (*m).clip.frame_count() } }
}

/// Floats per frame, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live motion handle.
#[no_mangle]
pub unsafe extern "C" fn meco_motion_dim(m: *const MecoMotion) -> usize {
    if m.is_null() { 0 } else { unsafe { (*m).clip.dim() } }
}

/// # Safety
/// `m` must be null or a live motion handle.
#[no_mangle]
pub unsafe extern "C" fn meco_motion_frame_rate(m: *const MecoMotion) -> f32 {
    if m.is_null() { 0.0 } else { unsafe { (*m).clip.frame_rate } }
}

/// Row-major frame data, valid until the handle is freed; null for a null handle.
///
/// # Safety
/// `m` must be null or a live motion handle.
#[no_mangle]
pub unsafe extern "C" fn meco_motion_data(m: *const MecoMotion) -> *const f32 {
    if m.is_null() { ptr::null() } else { unsafe { (*m).clip.data().as_ptr() } }
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn meco_motion_free(m: *mut MecoMotion) {
    if !m.is_null() {
        drop(unsafe { Box::from_raw(m) });
    }
}

/// Beat constancy of gesture beats against audio beats (seconds).
///
/// # Safety
/// Each array must hold its stated number of doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn meco_beat_constancy(
    gesture: *const f64,
    n_gesture: usize,
    audio: *const f64,
    n_audio: usize,
    sigma: f64,
    out: *mut f64,
) -> MecoStatus {
    guard(|| {
        non_null(out, "output")?;
        non_null(gesture, "gesture beats")?;
        non_null(audio, "audio beats")?;
        let g = unsafe { std::slice::from_raw_parts(gesture, n_gesture) };
        let a = unsafe { std::slice::from_raw_parts(audio, n_audio) };
        let v = beat_constancy(g, a, sigma).map_err(fail)?;
        unsafe { *out = v };
        Ok(())
    })
}
