//! C ABI for dnnwpe.
//!
//! All objects cross the boundary as opaque handles created by a
//! `dnnwpe_*_new`/`load`/producer function and released with the matching
//! `dnnwpe_*_free`. Every fallible function returns a [`DnnwpeStatus`];
//! on failure, [`dnnwpe_last_error`] describes the error for the calling
//! thread. Output handles are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::Arc;

use dnnwpe::metrics::cepstral_distance;
use dnnwpe::pipeline::Reference;
use dnnwpe::stft::{analyze, synthesize, Window};
use dnnwpe::wpe::{iterative_wpe, oneshot_wpe};
use dnnwpe::{
    EnhanceMode, Enhancer, Error, MlpModel, Spectrogram, StftConfig, VarianceMap, Waveform,
    WpeConfig,
};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DnnwpeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    RankDeficient = 4,
    MissingModel = 5,
    Io = 6,
    Format = 7,
    Numeric = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DnnwpeWindow {
    Hann = 0,
    Rectangular = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DnnwpeMode {
    Proposed = 0,
    Wpe = 1,
    WpeMask = 2,
    Oracle = 3,
}

/// STFT parameters. `sample_rate == 0` accepts any input rate.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DnnwpeStftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub dft_len: usize,
    pub window: DnnwpeWindow,
    pub sample_rate: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DnnwpeWpeConfig {
    pub order: usize,
    pub delay: usize,
    pub iterations: usize,
    pub variance_floor: f64,
    pub diag_load: f64,
}

pub struct DnnwpeWaveform(Waveform);
pub struct DnnwpeSpectrogram(Spectrogram);
pub struct DnnwpeModel(Arc<MlpModel>);
pub struct DnnwpeEnhancer(Enhancer);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(DnnwpeStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) | Error::Value(_) | Error::Empty(_) => DnnwpeStatus::InvalidArgument,
            Error::Shape(_) => DnnwpeStatus::ShapeMismatch,
            Error::RankDeficient { .. } => DnnwpeStatus::RankDeficient,
            Error::NonFiniteLoss { .. } => DnnwpeStatus::Numeric,
            Error::MissingModel(_) => DnnwpeStatus::MissingModel,
            Error::Format(_) | Error::Wav(_) => DnnwpeStatus::Format,
            Error::Io(_) => DnnwpeStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn fail<T>(status: DnnwpeStatus, msg: &str) -> Result<T, Failure> {
    Err(Failure(status, msg.to_string()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DnnwpeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DnnwpeStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            DnnwpeStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(DnnwpeStatus::NullPointer, format!("{what} is null")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn check_out<T>(out: *mut *mut T) -> Result<(), Failure> {
    if out.is_null() {
        return fail(DnnwpeStatus::NullPointer, "output pointer is null");
    }
    Ok(())
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return fail(DnnwpeStatus::NullPointer, "path is null");
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(DnnwpeStatus::InvalidArgument, "path is not valid UTF-8"),
    }
}

impl DnnwpeStftConfig {
    fn to_core(self) -> Result<StftConfig, Failure> {
        let cfg = StftConfig {
            frame_len: self.frame_len,
            hop: self.hop,
            dft_len: self.dft_len,
            window: match self.window {
                DnnwpeWindow::Hann => Window::Hann,
                DnnwpeWindow::Rectangular => Window::Rectangular,
            },
            sample_rate: (self.sample_rate != 0).then_some(self.sample_rate),
            pad_tail: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl DnnwpeWpeConfig {
    fn to_core(self) -> WpeConfig {
        WpeConfig {
            order: self.order,
            delay: self.delay,
            iterations: self.iterations,
            variance_floor: self.variance_floor,
            diag_load: self.diag_load,
            parallel: true,
        }
    }
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn dnnwpe_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dnnwpe_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// 800/160/800 Hann at 16 kHz.
#[no_mangle]
pub extern "C" fn dnnwpe_stft_config_default() -> DnnwpeStftConfig {
    let d = StftConfig::default();
    DnnwpeStftConfig {
        frame_len: d.frame_len,
        hop: d.hop,
        dft_len: d.dft_len,
        window: DnnwpeWindow::Hann,
        sample_rate: d.sample_rate.unwrap_or(0),
    }
}

#[no_mangle]
pub extern "C" fn dnnwpe_wpe_config_default() -> DnnwpeWpeConfig {
    let d = WpeConfig::default();
    DnnwpeWpeConfig {
        order: d.order,
        delay: d.delay,
        iterations: d.iterations,
        variance_floor: d.variance_floor,
        diag_load: d.diag_load,
    }
}

/// Creates a waveform from planar samples: `channels` consecutive runs of
/// `len` doubles.
///
/// # Safety
/// `samples` must point to `channels * len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn dnnwpe_waveform_new(
    samples: *const f64,
    channels: usize,
    len: usize,
    sample_rate: u32,
    out: *mut *mut DnnwpeWaveform,
) -> DnnwpeStatus {
    guard(|| {
        check_out(out)?;
        if samples.is_null() && channels * len > 0 {
            return fail(DnnwpeStatus::NullPointer, "samples is null");
        }
        let data: &[f64] = if channels * len == 0 {
            &[]
        } else {
            std::slice::from_raw_parts(samples, channels * len)
        };
        let chans = (0..channels).map(|m| data[m * len..(m + 1) * len].to_vec()).collect();
        put(out, DnnwpeWaveform(Waveform::new(chans, sample_rate)?));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnnwpe_waveform_read_wav(
    path: *const c_char,
    out: *mut *mut DnnwpeWaveform,
) -> DnnwpeStatus {
    guard(|| {
        check_out(out)?;
        let w = Waveform::read_wav(path_arg(path)?)?;
        put(out, DnnwpeWaveform(w));
        Ok(())
    })
}

/// Writes 32-bit float WAV.
///
/// # Safety
/// `wav` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dnnwpe_waveform_write_wav(
    wav: *const DnnwpeWaveform,
    path: *const c_char,
) -> DnnwpeStatus {
    guard(|| {
        let w = get(wav, "waveform")?;
        w.0.write_wav(path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `wav` must be a live handle; the out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn dnnwpe_waveform_info(
    wav: *const DnnwpeWaveform,
    channels: *mut usize,
    len: *mut usize,
    sample_rate: *mut u32,
) -> DnnwpeStatus {
    guard(|| {
        let w = &get(wav, "waveform")?.0;
        if let Some(c) = channels.as_mut() {
            *c = w.num_channels();
        }
        if let Some(l) = len.as_mut() {
            *l = w.len();
        }
        if let Some(r) = sample_rate.as_mut() {
            *r = w.sample_rate();
        }
        Ok(())
    })
}

/// Copies channel `channel` into `buf`, which holds `capacity` doubles.
///
/// # Safety
/// `buf` must point to `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dnnwpe_waveform_copy_channel(
    wav: *const DnnwpeWaveform,
    channel: usize,
    buf: *mut f64,
    capacity: usize,
) -> DnnwpeStatus {
    guard(|| {
        let w = &get(wav, "waveform")?.0;
        if channel >= w.num_channels() {
            return fail(DnnwpeStatus::InvalidArgument, "channel out of range");
        }
        if capacity < w.len() {
            return fail(DnnwpeStatus::InvalidArgument, "buffer too small");
        }
        if buf.is_null() && w.len() > 0 {
            return fail(DnnwpeStatus::NullPointer, "buffer is null");
        }
        if w.len() > 0 {
            std::slice::from_raw_parts_mut(buf, w.len()).copy_from_slice(w.channel(channel));
        }
        Ok(())
    })
}

/// # Safety
/// `wav` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dnnwpe_waveform_free(wav: *mut DnnwpeWaveform) {
    if !wav.is_null() {
        drop(Box::from_raw(wav));
    }
}

/// # Safety
/// `wav` and `cfg` must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dnnwpe_analyze(
    wav: *const DnnwpeWaveform,
    cfg: *const DnnwpeStftConfig,
    out: *mut *mut DnnwpeSpectrogram,
) -> DnnwpeStatus {
    guard(|| {
        check_out(out)?;
        let w = get(wav, "waveform")?;
        let cfg = get(cfg, "config")?.to_core()?;
        put(out, DnnwpeSpectrogram(analyze(&w.0, &cfg)?));
        Ok(())
    })
}

/// # Safety
/// `spec` and `cfg` must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dnnwpe_synthesize(
    spec: *const DnnwpeSpectrogram,
    cfg: *const DnnwpeStftConfig,
    sample_rate: u32,
    out: *mut *mut DnnwpeWaveform,
) -> DnnwpeStatus {
    guard(|| {
        check_out(out)?;
        let s = get(spec, "spectrogram")?;
        let cfg = get(cfg, "config")?.to_core()?;
        put(out, DnnwpeWaveform(synthesize(&s.0, &cfg, sample_rate)?));
        Ok(())
    })
}

/// # Safety
/// `spec` must be a live handle; the out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn dnnwpe_spectrogram_shape(
    spec: *const DnnwpeSpectrogram,
    frames: *mut usize,
    bins: *mut usize,
    channels: *mut usize,
) -> DnnwpeStatus {
    guard(|| {
        let (n, k, m) = get(spec, "spectrogram")?.0.shape();
        if let Some(p) = frames.as_mut() {
            *p = n;
        }
        if let Some(p) = bins.as_mut() {
            *p = k;
        }
        if let Some(p) = channels.as_mut() {
            *p = m;
        }
        Ok(())
    })
}

/// Copies the coefficients as interleaved (re, im) pairs in frame, bin,
/// channel order. `capacity` counts doubles.
///
/// # Safety
/// `buf` must point to `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dnnwpe_spectrogram_copy(
    spec: *const DnnwpeSpectrogram,
    buf: *mut f64,
    capacity: usize,
) -> DnnwpeStatus {
    guard(|| {
        let data = get(spec, "spectrogram")?.0.data();
        if capacity < 2 * data.len() {
            return fail(DnnwpeStatus::InvalidArgument, "buffer too small");
        }
        if buf.is_null() && !data.is_empty() {
            return fail(DnnwpeStatus::NullPointer, "buffer is null");
        }
        if !data.is_empty() {
            let dst = std::slice::from_raw_parts_mut(buf, 2 * data.len());
            for (pair, c) in dst.chunks_exact_mut(2).zip(data) {
                pair[0] = c.re;
                pair[1] = c.im;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `spec` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dnnwpe_spectrogram_free(spec: *mut DnnwpeSpectrogram) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Iterative WPE; `out` receives the single-channel desired spectrogram.
///
/// # Safety
/// `spec` and `cfg` must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dnnwpe_iterative_wpe(
    spec: *const DnnwpeSpectrogram,
    cfg: *const DnnwpeWpeConfig,
    out: *mut *mut DnnwpeSpectrogram,
) -> DnnwpeStatus {
    guard(|| {
        check_out(out)?;
        let s = get(spec, "spectrogram")?;
        let cfg = get(cfg, "config")?.to_core();
        put(out, DnnwpeSpectrogram(iterative_wpe(&s.0, &cfg)?.desired));
        Ok(())
    })
}

/// One weight solve with a caller-supplied variance map of `frames * bins`
/// doubles, frame-major.
///
/// # Safety
/// `variance` must point to `frames * bins` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn dnnwpe_oneshot_wpe(
    spec: *const DnnwpeSpectrogram,
    variance: *const f64,
    frames: usize,
    bins: usize,
    cfg: *const DnnwpeWpeConfig,
    out: *mut *mut DnnwpeSpectrogram,
) -> DnnwpeStatus {
    guard(|| {
        check_out(out)?;
        let s = get(spec, "spectrogram")?;
        let cfg = get(cfg, "config")?.to_core();
        if variance.is_null() {
            return fail(DnnwpeStatus::NullPointer, "variance is null");
        }
        let v = std::slice::from_raw_parts(variance, frames * bins).to_vec();
        let var = VarianceMap::new(frames, bins, v)?;
        put(out, DnnwpeSpectrogram(oneshot_wpe(&s.0, &var, &cfg)?));
        Ok(())
    })
}

/// Mean cepstral distance of `estimate` against `reference` (channel 0).
///
/// # Safety
/// Handles and `cfg` must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dnnwpe_cepstral_distance(
    reference: *const DnnwpeWaveform,
    estimate: *const DnnwpeWaveform,
    cfg: *const DnnwpeStftConfig,
    out: *mut f64,
) -> DnnwpeStatus {
    guard(|| {
        if out.is_null() {
            return fail(DnnwpeStatus::NullPointer, "output pointer is null");
        }
        let r = get(reference, "reference")?;
        let e = get(estimate, "estimate")?;
        let cfg = get(cfg, "config")?.to_core()?;
        *out = cepstral_distance(&r.0, &e.0, &cfg)?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dnnwpe_model_load(
    path: *const c_char,
    out: *mut *mut DnnwpeModel,
) -> DnnwpeStatus {
    guard(|| {
        check_out(out)?;
        let m = MlpModel::load_file(path_arg(path)?)?;
        put(out, DnnwpeModel(Arc::new(m)));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dnnwpe_model_free(model: *mut DnnwpeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Creates an enhancer. `model` may be null except in `Proposed` mode; the
/// enhancer keeps its own reference, so the model handle may be freed
/// afterwards.
///
/// # Safety
/// Pointers must be valid or null where allowed; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dnnwpe_enhancer_new(
    mode: DnnwpeMode,
    model: *const DnnwpeModel,
    wpe: *const DnnwpeWpeConfig,
    stft: *const DnnwpeStftConfig,
    out: *mut *mut DnnwpeEnhancer,
) -> DnnwpeStatus {
    guard(|| {
        check_out(out)?;
        let mode = match mode {
            DnnwpeMode::Proposed => EnhanceMode::Proposed,
            DnnwpeMode::Wpe => EnhanceMode::Wpe,
            DnnwpeMode::WpeMask => EnhanceMode::WpeMask,
            DnnwpeMode::Oracle => EnhanceMode::OneshotOracle,
        };
        let wpe = get(wpe, "wpe config")?.to_core();
        let stft = get(stft, "stft config")?.to_core()?;
        let mut e = Enhancer::new(mode, wpe, stft);
        if let Some(m) = model.as_ref() {
            e = e.with_model(m.0.clone());
        } else if mode == EnhanceMode::Proposed {
            return fail(DnnwpeStatus::MissingModel, "proposed mode needs a model");
        }
        put(out, DnnwpeEnhancer(e));
        Ok(())
    })
}

/// Enhances `mixture`; `clean` and `reverberant` are optional ground-truth
/// references (required by `Oracle`, and by `WpeMask` without a model).
///
/// # Safety
/// Handles must be valid or null where allowed; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dnnwpe_enhancer_run(
    enhancer: *const DnnwpeEnhancer,
    mixture: *const DnnwpeWaveform,
    clean: *const DnnwpeWaveform,
    reverberant: *const DnnwpeWaveform,
    out: *mut *mut DnnwpeWaveform,
) -> DnnwpeStatus {
    guard(|| {
        check_out(out)?;
        let e = get(enhancer, "enhancer")?;
        let x = get(mixture, "mixture")?;
        let reference = match (clean.as_ref(), reverberant.as_ref()) {
            (Some(c), Some(r)) => Some(Reference { clean: &c.0, reverberant: &r.0 }),
            (None, None) => None,
            _ => return fail(DnnwpeStatus::InvalidArgument, "pass both references or neither"),
        };
        put(out, DnnwpeWaveform(e.0.enhance_with_reference(&x.0, reference)?));
        Ok(())
    })
}

/// # Safety
/// `enhancer` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dnnwpe_enhancer_free(enhancer: *mut DnnwpeEnhancer) {
    if !enhancer.is_null() {
        drop(Box::from_raw(enhancer));
    }
}
