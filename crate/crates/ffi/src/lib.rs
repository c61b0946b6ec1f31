//! C ABI over the soupsearch core.
//!
//! Every function returns an [`SsStatus`]. On failure a human-readable
//! message is kept per thread and can be fetched with
//! [`ss_last_error_message`]. Objects cross the boundary as opaque handles
//! that the caller releases with the matching `*_free` function.
//!
//! Panics never unwind into C; they are reported as `SS_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use soupsearch::analysis::{spearman, AnalysisError};
use soupsearch::cmaes::{CandidateToken, CmaEs, CmaError};
use soupsearch::merger::{merge, normalize, MergeError, WeightVector};
use soupsearch::tensorstore::{read_checkpoint, write_checkpoint, CheckpointPool, StoreError, Tensor, TensorMap};

/// Result codes shared by every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Merge = 5,
    DegenerateWeights = 6,
    Optimizer = 7,
    Analysis = 8,
    BufferTooSmall = 9,
    NotFound = 10,
    Panic = 99,
}

/// An in-memory checkpoint: named f32 tensors.
pub struct SsCheckpoint(TensorMap);

/// An ordered pool of checkpoints sharing one schema.
pub struct SsPool(CheckpointPool);

/// A CMA-ES instance that maximizes the fitness it is told.
pub struct SsOptimizer(CmaEs);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(SsStatus, String);

type FfiResult = Result<(), Failure>;

fn fail(status: SsStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::Io { .. } => SsStatus::Io,
            StoreError::MissingTensor(_) => SsStatus::NotFound,
            StoreError::InvalidTensor { .. } | StoreError::InvalidPool(_) => SsStatus::InvalidArgument,
            _ => SsStatus::Format,
        };
        fail(status, e.to_string())
    }
}

impl From<MergeError> for Failure {
    fn from(e: MergeError) -> Self {
        let status = match e {
            MergeError::DegenerateWeights => SsStatus::DegenerateWeights,
            MergeError::Store(_) => SsStatus::Io,
            _ => SsStatus::Merge,
        };
        fail(status, e.to_string())
    }
}

impl From<CmaError> for Failure {
    fn from(e: CmaError) -> Self {
        fail(SsStatus::Optimizer, e.to_string())
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        fail(SsStatus::Analysis, e.to_string())
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> FfiResult) -> SsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            SsStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_last_error(&format!("internal panic: {msg}"));
            SsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(SsStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(SsStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(SsStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_out<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(SsStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(SsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(SsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn put<T>(out: *mut T, v: T, what: &str) -> FfiResult {
    if out.is_null() {
        return Err(fail(SsStatus::NullPointer, format!("{what} is null")));
    }
    out.write(v);
    Ok(())
}

/// Message for the most recent failure on the calling thread, or an empty
/// string after a success. The pointer stays valid until the next call into
/// this library on the same thread.
#[no_mangle]
pub extern "C" fn ss_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates an empty checkpoint with the given id.
///
/// # Safety
/// `id` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_checkpoint_new(id: *const c_char, out: *mut *mut SsCheckpoint) -> SsStatus {
    guard(|| {
        let id = str_arg(id, "id")?;
        put(out, Box::into_raw(Box::new(SsCheckpoint(TensorMap::new(id)))), "out")
    })
}

/// Adds a tensor, copying `data`. `numel` must equal the product of the
/// `ndim` entries of `shape`.
///
/// # Safety
/// `shape` must point to `ndim` values and `data` to `numel` values.
#[no_mangle]
pub unsafe extern "C" fn ss_checkpoint_add_tensor(
    ckpt: *mut SsCheckpoint,
    name: *const c_char,
    shape: *const usize,
    ndim: usize,
    data: *const f32,
    numel: usize,
) -> SsStatus {
    guard(|| {
        let ckpt = handle_mut(ckpt, "checkpoint")?;
        let name = str_arg(name, "name")?;
        let shape = slice_arg(shape, ndim, "shape")?.to_vec();
        let data = slice_arg(data, numel, "data")?.to_vec();
        if shape.iter().product::<usize>() != numel {
            return Err(fail(SsStatus::InvalidArgument, format!("shape {shape:?} does not hold {numel} values")));
        }
        ckpt.0.insert(name, Tensor::new(shape, data))?;
        Ok(())
    })
}

/// Reads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_checkpoint_read(path: *const c_char, out: *mut *mut SsCheckpoint) -> SsStatus {
    guard(|| {
        let ck = read_checkpoint(str_arg(path, "path")?)?;
        put(out, Box::into_raw(Box::new(SsCheckpoint(ck))), "out")
    })
}

/// Writes a checkpoint file atomically.
///
/// # Safety
/// `ckpt` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ss_checkpoint_write(ckpt: *const SsCheckpoint, path: *const c_char) -> SsStatus {
    guard(|| {
        let ckpt = handle(ckpt, "checkpoint")?;
        write_checkpoint(str_arg(path, "path")?, &ckpt.0)?;
        Ok(())
    })
}

/// Number of tensors in the checkpoint.
///
/// # Safety
/// `ckpt` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_checkpoint_tensor_count(ckpt: *const SsCheckpoint, out: *mut usize) -> SsStatus {
    guard(|| put(out, handle(ckpt, "checkpoint")?.0.len(), "out"))
}

/// Element count of the named tensor.
///
/// # Safety
/// `ckpt` must be a live handle, `name` a NUL-terminated string and `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_checkpoint_tensor_numel(
    ckpt: *const SsCheckpoint,
    name: *const c_char,
    out: *mut usize,
) -> SsStatus {
    guard(|| {
        let ckpt = handle(ckpt, "checkpoint")?;
        let name = str_arg(name, "name")?;
        let t = ckpt.0.get(name).ok_or_else(|| fail(SsStatus::NotFound, format!("no tensor {name:?}")))?;
        put(out, t.numel(), "out")
    })
}

/// Copies the named tensor's values into `buf`, which must hold at least
/// its element count.
///
/// # Safety
/// `buf` must point to `cap` writable floats.
#[no_mangle]
pub unsafe extern "C" fn ss_checkpoint_copy_tensor(
    ckpt: *const SsCheckpoint,
    name: *const c_char,
    buf: *mut f32,
    cap: usize,
) -> SsStatus {
    guard(|| {
        let ckpt = handle(ckpt, "checkpoint")?;
        let name = str_arg(name, "name")?;
        let t = ckpt.0.get(name).ok_or_else(|| fail(SsStatus::NotFound, format!("no tensor {name:?}")))?;
        if cap < t.data.len() {
            return Err(fail(SsStatus::BufferTooSmall, format!("need {} floats, got {cap}", t.data.len())));
        }
        slice_out(buf, t.data.len(), "buf")?.copy_from_slice(&t.data);
        Ok(())
    })
}

/// Releases a checkpoint. Null is ignored.
///
/// # Safety
/// `ckpt` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_checkpoint_free(ckpt: *mut SsCheckpoint) {
    if !ckpt.is_null() {
        drop(Box::from_raw(ckpt));
    }
}

/// Clamps negatives to zero and rescales to sum to one.
/// Fails with `SS_STATUS_DEGENERATE_WEIGHTS` when nothing positive remains.
///
/// # Safety
/// `raw` and `out` must each point to `n` values; they may alias.
#[no_mangle]
pub unsafe extern "C" fn ss_normalize(raw: *const f64, n: usize, out: *mut f64) -> SsStatus {
    guard(|| {
        let w = normalize(&WeightVector(slice_arg(raw, n, "raw")?.to_vec()))?;
        slice_out(out, n, "out")?.copy_from_slice(w.as_slice());
        Ok(())
    })
}

/// Opens a pool directory (ordered by `pool.json`, else by file name).
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_pool_open_dir(dir: *const c_char, out: *mut *mut SsPool) -> SsStatus {
    guard(|| {
        let pool = CheckpointPool::from_dir(str_arg(dir, "dir")?)?;
        put(out, Box::into_raw(Box::new(SsPool(pool))), "out")
    })
}

/// Number of checkpoints in the pool.
///
/// # Safety
/// `pool` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_pool_len(pool: *const SsPool, out: *mut usize) -> SsStatus {
    guard(|| put(out, handle(pool, "pool")?.0.len(), "out"))
}

/// Merges the pool with `n` raw weights, which are normalized first as in
/// [`ss_normalize`]. The result is a new checkpoint handle.
///
/// # Safety
/// `weights` must point to `n` values and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_pool_merge(
    pool: *const SsPool,
    weights: *const f64,
    n: usize,
    out: *mut *mut SsCheckpoint,
) -> SsStatus {
    guard(|| {
        let pool = handle(pool, "pool")?;
        let w = normalize(&WeightVector(slice_arg(weights, n, "weights")?.to_vec()))?;
        let merged = merge(&pool.0, &w)?;
        put(out, Box::into_raw(Box::new(SsCheckpoint(merged))), "out")
    })
}

/// Releases a pool. Null is ignored.
///
/// # Safety
/// `pool` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_pool_free(pool: *mut SsPool) {
    if !pool.is_null() {
        drop(Box::from_raw(pool));
    }
}

/// Creates an optimizer at mean `m0` (length `dim`). A `lambda` of 0 picks
/// the default population size.
///
/// # Safety
/// `m0` must point to `dim` values and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_optimizer_new(
    m0: *const f64,
    dim: usize,
    sigma0: f64,
    lambda: usize,
    seed: u64,
    out: *mut *mut SsOptimizer,
) -> SsStatus {
    guard(|| {
        let m0 = slice_arg(m0, dim, "m0")?;
        let es = CmaEs::new(m0, sigma0, (lambda > 0).then_some(lambda), seed)?;
        put(out, Box::into_raw(Box::new(SsOptimizer(es))), "out")
    })
}

/// Search dimension.
///
/// # Safety
/// `opt` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_optimizer_dim(opt: *const SsOptimizer, out: *mut usize) -> SsStatus {
    guard(|| put(out, handle(opt, "optimizer")?.0.dim(), "out"))
}

/// Population size per generation.
///
/// # Safety
/// `opt` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_optimizer_lambda(opt: *const SsOptimizer, out: *mut usize) -> SsStatus {
    guard(|| put(out, handle(opt, "optimizer")?.0.lambda(), "out"))
}

/// Samples one candidate into `x` (length `dim`) and its token into `token`.
///
/// # Safety
/// `x` must point to `dim` writable values and `token` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_optimizer_ask(opt: *mut SsOptimizer, x: *mut f64, dim: usize, token: *mut u64) -> SsStatus {
    guard(|| {
        let opt = handle_mut(opt, "optimizer")?;
        if dim != opt.0.dim() {
            return Err(fail(SsStatus::InvalidArgument, format!("dim {dim}, optimizer has {}", opt.0.dim())));
        }
        if token.is_null() {
            return Err(fail(SsStatus::NullPointer, "token is null"));
        }
        let out = slice_out(x, dim, "x")?;
        let (v, t) = opt.0.ask()?;
        out.copy_from_slice(&v);
        token.write(t.0);
        Ok(())
    })
}

/// Reports the fitness (higher is better) of an asked candidate.
///
/// # Safety
/// `opt` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_optimizer_tell(opt: *mut SsOptimizer, token: u64, fitness: f64) -> SsStatus {
    guard(|| {
        handle_mut(opt, "optimizer")?.0.tell(CandidateToken(token), fitness)?;
        Ok(())
    })
}

/// Adds an externally evaluated point to the current generation.
///
/// # Safety
/// `x` must point to `dim` values.
#[no_mangle]
pub unsafe extern "C" fn ss_optimizer_inject(opt: *mut SsOptimizer, x: *const f64, dim: usize, fitness: f64) -> SsStatus {
    guard(|| {
        let opt = handle_mut(opt, "optimizer")?;
        opt.0.inject(slice_arg(x, dim, "x")?, fitness)?;
        Ok(())
    })
}

/// Copies the current mean into `out` (length `dim`).
///
/// # Safety
/// `out` must point to `dim` writable values.
#[no_mangle]
pub unsafe extern "C" fn ss_optimizer_mean(opt: *const SsOptimizer, out: *mut f64, dim: usize) -> SsStatus {
    guard(|| {
        let opt = handle(opt, "optimizer")?;
        let m = opt.0.mean();
        if dim != m.len() {
            return Err(fail(SsStatus::InvalidArgument, format!("dim {dim}, optimizer has {}", m.len())));
        }
        slice_out(out, dim, "out")?.copy_from_slice(m);
        Ok(())
    })
}

/// Current global step size.
///
/// # Safety
/// `opt` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_optimizer_sigma(opt: *const SsOptimizer, out: *mut f64) -> SsStatus {
    guard(|| put(out, handle(opt, "optimizer")?.0.sigma(), "out"))
}

/// Releases an optimizer. Null is ignored.
///
/// # Safety
/// `opt` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_optimizer_free(opt: *mut SsOptimizer) {
    if !opt.is_null() {
        drop(Box::from_raw(opt));
    }
}

/// Spearman rank correlation of two series of length `n`, ties averaged.
///
/// # Safety
/// `x` and `y` must each point to `n` values and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_spearman(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> SsStatus {
    guard(|| {
        let r = spearman(slice_arg(x, n, "x")?, slice_arg(y, n, "y")?)?;
        put(out, r, "out")
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ss_version() -> *const c_char {
    static V: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    V.as_ptr().cast()
}
