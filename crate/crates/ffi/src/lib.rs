//! C ABI over the `dslp` library.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function. Every fallible call returns a
//! [`DslpStatus`]; on failure [`dslp_last_error`] describes the problem on
//! the calling thread. Strings returned by the library are released with
//! [`dslp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use dslp::dataset::train_sample;
use dslp::directional::{encode_von_mises, DirField, VonMisesSpec};
use dslp::field::{GridField, LayeredWorld, ObservationSet};
use dslp::graphgen::{fit_graph, GraphConfig, LaneGraph};
use dslp::objective::{slp_loss_soft, Alpha};
use dslp::synthworld::{
    complete_world, generate_world, sample_observations_detailed, CompletionMode, GroundTruth, ObservationParams,
    TemplateKind, WorldTemplate,
};
use dslp::trainer::Predictor;
use dslp::DslpError;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DslpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Io = 4,
    Format = 5,
    NoSupervision = 6,
    NoValidPath = 7,
    TemplateOutOfBounds = 8,
    Diverged = 9,
    Internal = 10,
}

impl From<&DslpError> for DslpStatus {
    fn from(e: &DslpError) -> Self {
        match e {
            DslpError::DimensionMismatch(_) | DslpError::ChannelMismatch { .. } => DslpStatus::DimensionMismatch,
            DslpError::Io(_) => DslpStatus::Io,
            DslpError::Format(_) | DslpError::Json(_) => DslpStatus::Format,
            DslpError::NoSupervision | DslpError::NoDirectionalSupervision | DslpError::EmptyMask => {
                DslpStatus::NoSupervision
            }
            DslpError::NoValidPath | DslpError::DegenerateEndpoints => DslpStatus::NoValidPath,
            DslpError::TemplateOutOfBounds(_) => DslpStatus::TemplateOutOfBounds,
            DslpError::Diverged { .. } => DslpStatus::Diverged,
            _ => DslpStatus::InvalidArgument,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: DslpStatus, msg: impl Into<String>) -> DslpStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, mapping errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), DslpStatus>) -> DslpStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DslpStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(DslpStatus::Internal, "panic inside dslp"),
    }
}

fn lib<T>(r: dslp::Result<T>) -> Result<T, DslpStatus> {
    r.map_err(|e| fail(DslpStatus::from(&e), e.to_string()))
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), DslpStatus> {
    if p.is_null() {
        Err(fail(DslpStatus::NullPointer, format!("{what} is NULL")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `s` must be NULL or a NUL-terminated string.
unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, DslpStatus> {
    non_null(s, what)?;
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(DslpStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// A generated world: predictor input, observations and ground truth.
pub struct DslpWorld {
    input: LayeredWorld,
    obs: ObservationSet,
    gt: GroundTruth,
}

pub struct DslpPredictor {
    inner: Predictor,
}

/// An SLP map with its DP field.
pub struct DslpFields {
    slp: GridField,
    dir: DirField,
}

pub struct DslpGraph {
    inner: LaneGraph,
}

/// Message of the last failed call on this thread, or NULL. Valid until
/// the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn dslp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn dslp_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dslp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Generates a world of `side x side` cells. `template` is one of
/// `straight`, `curve`, `t-intersection`, `fourway`, `fork`, `merge`.
///
/// # Safety
/// `template` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dslp_world_generate(
    template: *const c_char,
    side: u32,
    lane_width: f64,
    rho: f64,
    seed: u64,
    out: *mut *mut DslpWorld,
) -> DslpStatus {
    guard(|| {
        non_null(out, "out")?;
        let kind: TemplateKind = lib(read_str(template, "template")?.parse())?;
        let t = WorldTemplate::scaled(kind, side as usize, lane_width);
        let (partial, gt) = lib(generate_world(&t, seed))?;
        let params = ObservationParams {
            rho,
            ..ObservationParams::default()
        };
        let sampled = lib(sample_observations_detailed(&gt, &params, seed.wrapping_mul(31).wrapping_add(7)))?;
        let input = lib(complete_world(
            &partial,
            &gt,
            CompletionMode::Oracle,
            seed.wrapping_mul(17).wrapping_add(3),
        ))?;
        *out = Box::into_raw(Box::new(DslpWorld {
            input,
            obs: sampled.obs,
            gt,
        }));
        Ok(())
    })
}

/// # Safety
/// `world` must be NULL or a handle from [`dslp_world_generate`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dslp_world_free(world: *mut DslpWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dslp_world_dims(world: *const DslpWorld, width: *mut u32, height: *mut u32) -> DslpStatus {
    guard(|| {
        non_null(world, "world")?;
        non_null(width, "width")?;
        non_null(height, "height")?;
        let (w, h) = (*world).input.dims();
        *width = w as u32;
        *height = h as u32;
        Ok(())
    })
}

/// Information-balance ratio of the world's observations.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dslp_world_alpha_ib(world: *const DslpWorld, out: *mut f64) -> DslpStatus {
    guard(|| {
        non_null(world, "world")?;
        non_null(out, "out")?;
        let s = lib(train_sample(&(*world).input, &(*world).obs))?;
        *out = lib(s.alpha_ib())?;
        Ok(())
    })
}

/// Ground-truth fields of a world (the oracle prediction).
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dslp_world_truth(world: *const DslpWorld, out: *mut *mut DslpFields) -> DslpStatus {
    guard(|| {
        non_null(world, "world")?;
        non_null(out, "out")?;
        let gt = &(*world).gt;
        *out = Box::into_raw(Box::new(DslpFields {
            slp: gt.p_true.clone(),
            dir: gt.dir_true.clone(),
        }));
        Ok(())
    })
}

/// Balanced SLP loss over `n` cells given as `width * height` row-major
/// arrays. A negative `alpha` selects the information-balance ratio.
///
/// # Safety
/// `labels`, `region` and `y_hat` must each point to `width * height`
/// readable doubles; `loss` and `alpha_ib` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dslp_slp_loss(
    labels: *const f64,
    region: *const f64,
    y_hat: *const f64,
    width: u32,
    height: u32,
    alpha: f64,
    loss: *mut f64,
    alpha_ib: *mut f64,
) -> DslpStatus {
    guard(|| {
        for (p, n) in [(labels, "labels"), (region, "region"), (y_hat, "y_hat")] {
            non_null(p, n)?;
        }
        non_null(loss, "loss")?;
        non_null(alpha_ib, "alpha_ib")?;
        let (w, h) = (width as usize, height as usize);
        let field = |p: *const f64| lib(GridField::from_values(w, h, 1.0, std::slice::from_raw_parts(p, w * h).to_vec()));
        let a = if alpha < 0.0 { Alpha::Auto } else { lib(Alpha::constant(alpha))? };
        let r = lib(slp_loss_soft(&field(labels)?, &field(region)?, &field(y_hat)?, a))?;
        *loss = r.loss;
        *alpha_ib = r.alpha_ib;
        Ok(())
    })
}

/// Discrete von Mises distribution over `bins` equal bins.
///
/// # Safety
/// `out` must point to `bins` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dslp_encode_von_mises(mu: f64, kappa: f64, bins: usize, out: *mut f64) -> DslpStatus {
    guard(|| {
        non_null(out, "out")?;
        let d = lib(VonMisesSpec::new(mu, kappa).and_then(|s| encode_von_mises(s, bins)))?;
        std::slice::from_raw_parts_mut(out, bins).copy_from_slice(&d);
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dslp_predictor_load(path: *const c_char, out: *mut *mut DslpPredictor) -> DslpStatus {
    guard(|| {
        non_null(out, "out")?;
        let p = read_str(path, "path")?;
        let inner = lib(Predictor::load(Path::new(p)))?;
        *out = Box::into_raw(Box::new(DslpPredictor { inner }));
        Ok(())
    })
}

/// Untrained predictor with seeded random weights for a world's channel count.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dslp_predictor_init(
    in_channels: u32,
    hidden: u32,
    kernel: u32,
    seed: u64,
    out: *mut *mut DslpPredictor,
) -> DslpStatus {
    guard(|| {
        non_null(out, "out")?;
        let arch = lib(dslp::trainer::ArchSpec::new(
            in_channels as usize,
            hidden as usize,
            kernel as usize,
            dslp::directional::DEFAULT_BINS,
        ))?;
        *out = Box::into_raw(Box::new(DslpPredictor {
            inner: Predictor::init(arch, seed),
        }));
        Ok(())
    })
}

/// # Safety
/// `predictor` must be NULL or a live predictor handle.
#[no_mangle]
pub unsafe extern "C" fn dslp_predictor_free(predictor: *mut DslpPredictor) {
    if !predictor.is_null() {
        drop(Box::from_raw(predictor));
    }
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dslp_predictor_forward(
    predictor: *const DslpPredictor,
    world: *const DslpWorld,
    out: *mut *mut DslpFields,
) -> DslpStatus {
    guard(|| {
        non_null(predictor, "predictor")?;
        non_null(world, "world")?;
        non_null(out, "out")?;
        let (slp, dir) = lib((*predictor).inner.forward(&(*world).input))?;
        *out = Box::into_raw(Box::new(DslpFields { slp, dir }));
        Ok(())
    })
}

/// # Safety
/// `fields` must be NULL or a live fields handle.
#[no_mangle]
pub unsafe extern "C" fn dslp_fields_free(fields: *mut DslpFields) {
    if !fields.is_null() {
        drop(Box::from_raw(fields));
    }
}

/// Copies the SLP map (row-major, `j` outer) into `out`.
///
/// # Safety
/// `fields` must be valid and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dslp_fields_slp(fields: *const DslpFields, out: *mut f64, len: usize) -> DslpStatus {
    guard(|| {
        non_null(fields, "fields")?;
        non_null(out, "out")?;
        let v = (*fields).slp.values();
        if len != v.len() {
            return Err(fail(
                DslpStatus::DimensionMismatch,
                format!("buffer holds {len} values, field has {}", v.len()),
            ));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(v);
        Ok(())
    })
}

/// Fits a lane graph with the default configuration for `lane_width`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dslp_graph_fit(
    fields: *const DslpFields,
    lane_width: f64,
    seed: u64,
    out: *mut *mut DslpGraph,
) -> DslpStatus {
    guard(|| {
        non_null(fields, "fields")?;
        non_null(out, "out")?;
        if !(lane_width > 0.0) {
            return Err(fail(DslpStatus::InvalidArgument, "lane width must be > 0"));
        }
        let mut cfg = GraphConfig::for_lane_width(lane_width);
        cfg.seed = seed;
        let inner = lib(fit_graph(&(*fields).slp, &(*fields).dir, &cfg))?;
        *out = Box::into_raw(Box::new(DslpGraph { inner }));
        Ok(())
    })
}

/// # Safety
/// `graph` must be NULL or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn dslp_graph_free(graph: *mut DslpGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dslp_graph_counts(graph: *const DslpGraph, nodes: *mut usize, edges: *mut usize) -> DslpStatus {
    guard(|| {
        non_null(graph, "graph")?;
        non_null(nodes, "nodes")?;
        non_null(edges, "edges")?;
        *nodes = (*graph).inner.nodes.len();
        *edges = (*graph).inner.edges.len();
        Ok(())
    })
}

/// Graph as JSON; release with [`dslp_string_free`].
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dslp_graph_to_json(graph: *const DslpGraph, out: *mut *mut c_char) -> DslpStatus {
    guard(|| {
        non_null(graph, "graph")?;
        non_null(out, "out")?;
        let s = lib((*graph).inner.to_json())?;
        *out = CString::new(s)
            .map_err(|_| fail(DslpStatus::Internal, "NUL in graph JSON"))?
            .into_raw();
        Ok(())
    })
}
