//! C ABI over the dlac compiler and simulator.
//!
//! Conventions: every fallible entry point returns a [`DlacStatus`]; on
//! failure a thread-local message is available through [`dlac_last_error`].
//! Handles are opaque and single-owner; free them with [`dlac_model_free`].
//! Tensor payloads cross the boundary as little-endian byte buffers in the
//! model's input/output order (int8 values as-is, int32 little-endian).
//!
//! The matching header is regenerated into include/dlac.h by the build
//! script.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use dlac_core::artifact::{compile, load_artifact, write_artifact, CompiledModel};
use dlac_core::graph::Dtype;
use dlac_core::interp::{interpret, seeded_inputs, TensorData, TensorValue};
use dlac_core::isa::{IsaVariant, ParallelMode};
use dlac_core::model::load_model;
use dlac_core::partition::{BarrierMode, DwMode};
use dlac_core::sim::run_end_to_end;
use dlac_core::{Error, ErrorClass};

/// Result of every fallible call. Matches the CLI exit-code contract.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DlacStatus {
    /// Success.
    Ok = 0,
    /// Simulator or stream invariant violated; state may be inconsistent.
    Internal = 1,
    /// Bad arguments, files or model contents.
    Input = 2,
    /// The model cannot be placed on the requested device variant.
    Planning = 3,
}

/// Device variant selector.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DlacVariant {
    /// Processing elements, 1..=4096.
    pub pe_count: u32,
    /// On-chip memory in bytes, at least 1024.
    pub sram_bytes: u64,
    /// 0 = output-channel parallel, 1 = input-channel parallel.
    pub parallel_mode: u32,
    /// 0 = depthwise on CPU, 1 = emulated per-channel, 2 = native.
    pub dw_mode: u32,
}

/// Cost counters for one run. DMA cycles are accounted separately from
/// compute cycles; `utilization` is macs / (pe_count * cycles).
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DlacMetrics {
    pub cycles: u64,
    pub macs: u64,
    pub dma_bytes: u64,
    pub dma_cycles: u64,
    pub register_writes: u64,
    pub issues: u64,
    pub utilization: f64,
}

/// Shape and size of one model input or output.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DlacTensorInfo {
    /// Number of used entries in `dims`.
    pub rank: usize,
    pub dims: [u64; 8],
    /// 1 for int8, 4 for int32.
    pub elem_bytes: u32,
    /// Total buffer size in bytes.
    pub byte_len: u64,
}

/// Opaque compiled model handle.
pub struct DlacModel {
    inner: CompiledModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: DlacStatus, msg: String) -> DlacStatus {
    set_error(msg);
    status
}

fn fail_err(e: &Error) -> DlacStatus {
    let status = match e.class() {
        ErrorClass::Input => DlacStatus::Input,
        ErrorClass::Planning => DlacStatus::Planning,
        ErrorClass::Internal => DlacStatus::Internal,
    };
    fail(status, e.to_string())
}

/// Runs `f`, converting panics into `Internal` so unwinding never crosses
/// the ABI.
fn guarded(f: impl FnOnce() -> DlacStatus) -> DlacStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(DlacStatus::Internal, format!("internal panic: {msg}"))
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a Path, DlacStatus> {
    if p.is_null() {
        return Err(fail(DlacStatus::Input, format!("{what} is null")));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => Err(fail(
            DlacStatus::Input,
            format!("{what} is not valid UTF-8"),
        )),
    }
}

fn variant_arg(v: *const DlacVariant) -> Result<IsaVariant, DlacStatus> {
    if v.is_null() {
        return Err(fail(DlacStatus::Input, "variant is null".into()));
    }
    let v = unsafe { *v };
    let parallel_mode = match v.parallel_mode {
        0 => ParallelMode::Output,
        1 => ParallelMode::Input,
        other => {
            return Err(fail(
                DlacStatus::Input,
                format!("parallel_mode {other} out of range"),
            ))
        }
    };
    let dw_mode = match v.dw_mode {
        0 => DwMode::Fallback,
        1 => DwMode::Emulated,
        2 => DwMode::Native,
        other => {
            return Err(fail(
                DlacStatus::Input,
                format!("dw_mode {other} out of range"),
            ))
        }
    };
    let variant = IsaVariant {
        pe_count: v.pe_count,
        sram_bytes: v.sram_bytes,
        parallel_mode,
        dw_mode,
    };
    variant.validate().map_err(|e| fail_err(&e))?;
    Ok(variant)
}

unsafe fn model_arg<'a>(m: *const DlacModel) -> Result<&'a CompiledModel, DlacStatus> {
    if m.is_null() {
        return Err(fail(DlacStatus::Input, "model handle is null".into()));
    }
    Ok(&(*m).inner)
}

fn emit(out: *mut *mut DlacModel, compiled: CompiledModel) -> DlacStatus {
    if out.is_null() {
        return fail(DlacStatus::Input, "out handle is null".into());
    }
    unsafe { *out = Box::into_raw(Box::new(DlacModel { inner: compiled })) };
    DlacStatus::Ok
}

fn dtype_bytes(d: Dtype) -> u32 {
    match d {
        Dtype::I8 => 1,
        Dtype::I32 => 4,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dlac_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread. Valid until the next
/// failing call on the same thread; never null.
#[no_mangle]
pub extern "C" fn dlac_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Compiles the model in `model_dir` (model.json + weights.bin) for a device
/// variant. `cut_at_barriers` nonzero makes barrier requantizes terminate
/// accelerator regions. On success `*out` owns the handle.
///
/// # Safety
/// `model_dir` must be a NUL-terminated string; `out` must be a valid
/// location to store the handle.
#[no_mangle]
pub unsafe extern "C" fn dlac_compile(
    model_dir: *const c_char,
    variant: *const DlacVariant,
    cut_at_barriers: u32,
    out: *mut *mut DlacModel,
) -> DlacStatus {
    guarded(|| {
        let dir = match path_arg(model_dir, "model_dir") {
            Ok(d) => d,
            Err(s) => return s,
        };
        let variant = match variant_arg(variant) {
            Ok(v) => v,
            Err(s) => return s,
        };
        let barriers = if cut_at_barriers != 0 {
            BarrierMode::On
        } else {
            BarrierMode::Off
        };
        let graph = match load_model(dir) {
            Ok(g) => g,
            Err(e) => return fail_err(&e),
        };
        match compile(&graph, &variant, barriers) {
            Ok(compiled) => emit(out, compiled),
            Err(e) => fail_err(&e),
        }
    })
}

/// Writes a compiled artifact directory (manifest, partition, plans and
/// command streams) for later [`dlac_load`].
///
/// # Safety
/// `model` must be a live handle from this library; `dir` a NUL-terminated
/// string.
#[no_mangle]
pub unsafe extern "C" fn dlac_save(model: *const DlacModel, dir: *const c_char) -> DlacStatus {
    guarded(|| {
        let compiled = match model_arg(model) {
            Ok(m) => m,
            Err(s) => return s,
        };
        let dir = match path_arg(dir, "dir") {
            Ok(d) => d,
            Err(s) => return s,
        };
        match write_artifact(dir, compiled) {
            Ok(()) => DlacStatus::Ok,
            Err(e) => fail_err(&e),
        }
    })
}

/// Loads an artifact directory produced by [`dlac_save`], revalidating its
/// contents. On success `*out` owns the handle.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` a valid store location.
#[no_mangle]
pub unsafe extern "C" fn dlac_load(dir: *const c_char, out: *mut *mut DlacModel) -> DlacStatus {
    guarded(|| {
        let dir = match path_arg(dir, "dir") {
            Ok(d) => d,
            Err(s) => return s,
        };
        match load_artifact(dir) {
            Ok(compiled) => emit(out, compiled),
            Err(e) => fail_err(&e),
        }
    })
}

/// Frees a handle. Null is a no-op.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dlac_model_free(model: *mut DlacModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of model inputs. Null yields 0.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dlac_input_count(model: *const DlacModel) -> usize {
    model_arg(model).map(|m| m.graph.inputs.len()).unwrap_or(0)
}

/// Number of model outputs. Null yields 0.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dlac_output_count(model: *const DlacModel) -> usize {
    model_arg(model).map(|m| m.graph.outputs.len()).unwrap_or(0)
}

unsafe fn io_info(
    model: *const DlacModel,
    is_output: bool,
    index: usize,
    info: *mut DlacTensorInfo,
) -> DlacStatus {
    let compiled = match model_arg(model) {
        Ok(m) => m,
        Err(s) => return s,
    };
    if info.is_null() {
        return fail(DlacStatus::Input, "info is null".into());
    }
    let ids = if is_output {
        &compiled.graph.outputs
    } else {
        &compiled.graph.inputs
    };
    let Some(&tid) = ids.get(index) else {
        return fail(
            DlacStatus::Input,
            format!("tensor index {index} out of range"),
        );
    };
    let desc = compiled.graph.tensor(tid);
    if desc.shape.len() > 8 {
        return fail(
            DlacStatus::Input,
            format!("rank {} exceeds 8", desc.shape.len()),
        );
    }
    let mut dims = [0u64; 8];
    for (d, &s) in dims.iter_mut().zip(&desc.shape) {
        *d = s as u64;
    }
    let elem_bytes = dtype_bytes(desc.dtype);
    *info = DlacTensorInfo {
        rank: desc.shape.len(),
        dims,
        elem_bytes,
        byte_len: desc.elems() as u64 * elem_bytes as u64,
    };
    DlacStatus::Ok
}

/// Shape and byte size of input `index`.
///
/// # Safety
/// `model` must be a live handle; `info` a valid store location.
#[no_mangle]
pub unsafe extern "C" fn dlac_input_info(
    model: *const DlacModel,
    index: usize,
    info: *mut DlacTensorInfo,
) -> DlacStatus {
    guarded(|| io_info(model, false, index, info))
}

/// Shape and byte size of output `index`.
///
/// # Safety
/// `model` must be a live handle; `info` a valid store location.
#[no_mangle]
pub unsafe extern "C" fn dlac_output_info(
    model: *const DlacModel,
    index: usize,
    info: *mut DlacTensorInfo,
) -> DlacStatus {
    guarded(|| io_info(model, true, index, info))
}

unsafe fn io_name(
    model: *const DlacModel,
    is_output: bool,
    index: usize,
    buf: *mut c_char,
    cap: usize,
) -> DlacStatus {
    let compiled = match model_arg(model) {
        Ok(m) => m,
        Err(s) => return s,
    };
    if buf.is_null() || cap == 0 {
        return fail(DlacStatus::Input, "name buffer is empty".into());
    }
    let ids = if is_output {
        &compiled.graph.outputs
    } else {
        &compiled.graph.inputs
    };
    let Some(&tid) = ids.get(index) else {
        return fail(
            DlacStatus::Input,
            format!("tensor index {index} out of range"),
        );
    };
    let name = compiled.graph.tensor(tid).name.as_bytes();
    let n = name.len().min(cap - 1);
    ptr::copy_nonoverlapping(name.as_ptr() as *const c_char, buf, n);
    *buf.add(n) = 0;
    if n < name.len() {
        return fail(
            DlacStatus::Input,
            format!("name buffer needs {} bytes", name.len() + 1),
        );
    }
    DlacStatus::Ok
}

/// Copies the NUL-terminated name of input `index` into `buf` (truncated
/// names return an error after writing what fits).
///
/// # Safety
/// `buf` must hold at least `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn dlac_input_name(
    model: *const DlacModel,
    index: usize,
    buf: *mut c_char,
    cap: usize,
) -> DlacStatus {
    guarded(|| io_name(model, false, index, buf, cap))
}

/// Copies the NUL-terminated name of output `index` into `buf`.
///
/// # Safety
/// `buf` must hold at least `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn dlac_output_name(
    model: *const DlacModel,
    index: usize,
    buf: *mut c_char,
    cap: usize,
) -> DlacStatus {
    guarded(|| io_name(model, true, index, buf, cap))
}

fn decode_inputs(
    compiled: &CompiledModel,
    inputs: *const *const u8,
    input_lens: *const usize,
    n_inputs: usize,
) -> Result<Vec<TensorValue>, DlacStatus> {
    if compiled.graph.inputs.len() != n_inputs {
        return Err(fail(
            DlacStatus::Input,
            format!(
                "model takes {} input(s), got {n_inputs}",
                compiled.graph.inputs.len()
            ),
        ));
    }
    if n_inputs > 0 && (inputs.is_null() || input_lens.is_null()) {
        return Err(fail(DlacStatus::Input, "inputs are null".into()));
    }
    let mut values = Vec::with_capacity(n_inputs);
    for (i, &tid) in compiled.graph.inputs.iter().enumerate() {
        let desc = compiled.graph.tensor(tid).clone();
        let want = desc.elems() * dtype_bytes(desc.dtype) as usize;
        let (ptr_i, len_i) = unsafe { (*inputs.add(i), *input_lens.add(i)) };
        if ptr_i.is_null() {
            return Err(fail(DlacStatus::Input, format!("input {i} is null")));
        }
        if len_i != want {
            return Err(fail(
                DlacStatus::Input,
                format!(
                    "input {i} ('{}') wants {want} bytes, got {len_i}",
                    desc.name
                ),
            ));
        }
        let bytes = unsafe { slice::from_raw_parts(ptr_i, len_i) };
        let data = TensorData::from_le_bytes(desc.dtype, bytes).map_err(|e| fail_err(&e))?;
        values.push(TensorValue { desc, data });
    }
    Ok(values)
}

unsafe fn run_common(
    compiled: &CompiledModel,
    inputs: Vec<TensorValue>,
    outputs: *mut *mut u8,
    output_lens: *const usize,
    n_outputs: usize,
    verify: u32,
    metrics: *mut DlacMetrics,
) -> DlacStatus {
    if n_outputs != 0 {
        if compiled.graph.outputs.len() != n_outputs {
            return fail(
                DlacStatus::Input,
                format!(
                    "model has {} output(s), got {n_outputs}",
                    compiled.graph.outputs.len()
                ),
            );
        }
        if outputs.is_null() || output_lens.is_null() {
            return fail(DlacStatus::Input, "outputs are null".into());
        }
    }

    let result = match run_end_to_end(
        &compiled.graph,
        &compiled.partition,
        &compiled.streams,
        &inputs,
    ) {
        Ok(r) => r,
        Err(e) => return fail_err(&e),
    };

    if verify != 0 {
        let want = match interpret(&compiled.graph, &inputs) {
            Ok(w) => w,
            Err(e) => return fail_err(&e),
        };
        for (got, exp) in result.outputs.iter().zip(&want) {
            if got.data != exp.data {
                return fail(
                    DlacStatus::Internal,
                    format!("verification mismatch on tensor '{}'", exp.desc.name),
                );
            }
        }
    }

    for i in 0..n_outputs {
        let t = &result.outputs[i];
        let bytes = t.data.to_le_bytes();
        let (ptr_i, len_i) = (*outputs.add(i), *output_lens.add(i));
        if ptr_i.is_null() {
            return fail(DlacStatus::Input, format!("output {i} is null"));
        }
        if len_i != bytes.len() {
            return fail(
                DlacStatus::Input,
                format!(
                    "output {i} ('{}') wants {} bytes, got {len_i}",
                    t.desc.name,
                    bytes.len()
                ),
            );
        }
        ptr::copy_nonoverlapping(bytes.as_ptr(), ptr_i, bytes.len());
    }

    if !metrics.is_null() {
        let m = &result.metrics;
        *metrics = DlacMetrics {
            cycles: m.cycles,
            macs: m.macs,
            dma_bytes: m.dma_bytes,
            dma_cycles: m.dma_cycles,
            register_writes: m.register_writes,
            issues: m.issues,
            utilization: m.utilization(compiled.variant.pe_count),
        };
    }
    DlacStatus::Ok
}

/// Executes the model. `inputs[i]`/`input_lens[i]` supply each input's bytes
/// (exact size per [`dlac_input_info`]); `outputs[i]`/`output_lens[i]`
/// receive each output (exact size per [`dlac_output_info`]; pass
/// `n_outputs == 0` to discard). `verify` nonzero cross-checks against the
/// reference interpreter. `metrics` may be null.
///
/// # Safety
/// All arrays must cover their stated lengths and the model handle must be
/// live.
#[no_mangle]
pub unsafe extern "C" fn dlac_run(
    model: *const DlacModel,
    inputs: *const *const u8,
    input_lens: *const usize,
    n_inputs: usize,
    outputs: *mut *mut u8,
    output_lens: *const usize,
    n_outputs: usize,
    verify: u32,
    metrics: *mut DlacMetrics,
) -> DlacStatus {
    guarded(|| {
        let compiled = match model_arg(model) {
            Ok(m) => m,
            Err(s) => return s,
        };
        let values = match decode_inputs(compiled, inputs, input_lens, n_inputs) {
            Ok(v) => v,
            Err(s) => return s,
        };
        run_common(
            compiled,
            values,
            outputs,
            output_lens,
            n_outputs,
            verify,
            metrics,
        )
    })
}

/// Executes the model on deterministic seeded inputs, discarding outputs.
/// Useful for costing a variant without marshalling tensors.
///
/// # Safety
/// `model` must be a live handle; `metrics` may be null.
#[no_mangle]
pub unsafe extern "C" fn dlac_run_seeded(
    model: *const DlacModel,
    seed: u64,
    verify: u32,
    metrics: *mut DlacMetrics,
) -> DlacStatus {
    guarded(|| {
        let compiled = match model_arg(model) {
            Ok(m) => m,
            Err(s) => return s,
        };
        let values = seeded_inputs(&compiled.graph, seed);
        run_common(
            compiled,
            values,
            ptr::null_mut(),
            ptr::null(),
            0,
            verify,
            metrics,
        )
    })
}
