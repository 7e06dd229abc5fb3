//! C ABI over the xychain library.
//!
//! Every entry point returns an [`XyStatus`]; results go through out
//! pointers. On failure the message is kept per thread and can be read with
//! [`xy_last_error_message`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use xychain::ed::{classify_case, EdError, CASE_TOL};
use xychain::geometry::{qgt_components, ricci_scalar, GeometryError};
use xychain::scaling::{build_series, classify_decay, DecayConfig, DecayModel, Quantity, ScalingError};
use xychain::spectrum::{delta_gs, sector_ground_energy, SingleParticleSpectrum};
use xychain::{ChainParams, Sector};

/// Status codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XyStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Gapless mode, degenerate metric or similar pointwise singularity.
    Singular = 3,
    /// Request exceeds a size limit (e.g. exact diagonalization length).
    Capacity = 4,
    BufferTooSmall = 5,
    /// Not enough data or no acceptable model.
    Fit = 6,
    Panic = 99,
}

pub const XY_SECTOR_NS: i32 = 0;
pub const XY_SECTOR_R: i32 = 1;

pub const XY_QUANTITY_DELTA_E: i32 = 0;
pub const XY_QUANTITY_RICCI_NS: i32 = 1;
pub const XY_QUANTITY_RICCI_R: i32 = 2;
pub const XY_QUANTITY_DELTA_RICCI: i32 = 3;

pub const XY_MODEL_EXPONENTIAL: i32 = 0;
pub const XY_MODEL_POWERLAW: i32 = 1;
pub const XY_MODEL_BIEXPONENTIAL: i32 = 2;
pub const XY_MODEL_ERRATIC: i32 = 3;

/// Opaque chain parameters.
pub struct XyChain {
    params: ChainParams,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct XyQgt {
    pub q_hh: f64,
    pub q_gg: f64,
    pub q_hg: f64,
    pub omega_hg: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct XyRicci {
    pub r_determinant: f64,
    pub r_christoffel: f64,
    pub discrepancy: f64,
    /// Nonzero when the curvature stencil hit a gapless line.
    pub singular: i32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct XyFit {
    /// One of the `XY_MODEL_*` constants.
    pub model: i32,
    /// Second entries are NaN unless the model is bi-exponential.
    pub exponent: [f64; 2],
    pub r_squared: [f64; 2],
    pub window_min: usize,
    pub window_max: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(XyStatus, String);

impl From<xychain::chain::ChainError> for Fail {
    fn from(e: xychain::chain::ChainError) -> Self {
        Fail(XyStatus::InvalidArgument, e.to_string())
    }
}

impl From<GeometryError> for Fail {
    fn from(e: GeometryError) -> Self {
        let s = match e {
            GeometryError::Domain(_) => XyStatus::InvalidArgument,
            _ => XyStatus::Singular,
        };
        Fail(s, e.to_string())
    }
}

impl From<EdError> for Fail {
    fn from(e: EdError) -> Self {
        let s = match e {
            EdError::Capacity(_) => XyStatus::Capacity,
            EdError::Unclassifiable(_) => XyStatus::Singular,
            _ => XyStatus::InvalidArgument,
        };
        Fail(s, e.to_string())
    }
}

impl From<ScalingError> for Fail {
    fn from(e: ScalingError) -> Self {
        let s = match e {
            ScalingError::InsufficientData { .. } | ScalingError::BranchMisfit { .. } => XyStatus::Fit,
            _ => XyStatus::InvalidArgument,
        };
        Fail(s, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> XyStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            XyStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            XyStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(XyStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn chain_ref<'a>(c: *const XyChain) -> Result<&'a XyChain, Fail> {
    c.as_ref().ok_or_else(|| null("chain"))
}

unsafe fn write<T>(out: *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(v);
    Ok(())
}

fn sector(s: i32) -> Result<Sector, Fail> {
    match s {
        XY_SECTOR_NS => Ok(Sector::NS),
        XY_SECTOR_R => Ok(Sector::R),
        _ => Err(Fail(XyStatus::InvalidArgument, format!("unknown sector {s}"))),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn xy_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL, or
/// 0 when there is no error. `buf` may be NULL to query the length.
///
/// # Safety
/// `buf` must be NULL or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn xy_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Create a chain handle. Free it with [`xy_chain_free`].
///
/// # Safety
/// `out` must be valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn xy_chain_new(l: usize, j: f64, gamma: f64, h: f64, out: *mut *mut XyChain) -> XyStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let params = ChainParams::with_coupling(l, j, gamma, h)?;
        *out = Box::into_raw(Box::new(XyChain { params }));
        Ok(())
    })
}

/// # Safety
/// `chain` must be NULL or a handle from [`xy_chain_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn xy_chain_free(chain: *mut XyChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

/// Ground energy of one sector.
///
/// # Safety
/// `chain` must be a live handle and `out` valid for one double.
#[no_mangle]
pub unsafe extern "C" fn xy_ground_energy(chain: *const XyChain, sector_id: i32, out: *mut f64) -> XyStatus {
    guard(|| {
        let c = chain_ref(chain)?;
        write(out, sector_ground_energy(&c.params, sector(sector_id)?))
    })
}

/// NS minus R ground energy.
///
/// # Safety
/// `chain` must be a live handle and `out` valid for one double.
#[no_mangle]
pub unsafe extern "C" fn xy_delta_e(chain: *const XyChain, out: *mut f64) -> XyStatus {
    guard(|| {
        let c = chain_ref(chain)?;
        write(out, delta_gs(&c.params))
    })
}

/// Single-particle energies of a sector, k = 1..L, into `energies[0..L]`.
/// Returns `BufferTooSmall` when `len < L`.
///
/// # Safety
/// `chain` must be a live handle and `energies` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn xy_spectrum(
    chain: *const XyChain,
    sector_id: i32,
    energies: *mut f64,
    len: usize,
) -> XyStatus {
    guard(|| {
        let c = chain_ref(chain)?;
        let s = sector(sector_id)?;
        if energies.is_null() {
            return Err(null("energies"));
        }
        if len < c.params.l {
            return Err(Fail(
                XyStatus::BufferTooSmall,
                format!("need {} doubles, got {len}", c.params.l),
            ));
        }
        let sp = SingleParticleSpectrum::new(&c.params, s);
        ptr::copy_nonoverlapping(sp.energies.as_ptr(), energies, sp.energies.len());
        Ok(())
    })
}

/// Quantum geometric tensor of one sector.
///
/// # Safety
/// `chain` must be a live handle and `out` valid for one [`XyQgt`].
#[no_mangle]
pub unsafe extern "C" fn xy_qgt(chain: *const XyChain, sector_id: i32, out: *mut XyQgt) -> XyStatus {
    guard(|| {
        let c = chain_ref(chain)?;
        let q = qgt_components(&c.params, sector(sector_id)?)?;
        write(
            out,
            XyQgt {
                q_hh: q.q_hh,
                q_gg: q.q_gg,
                q_hg: q.q_hg,
                omega_hg: q.omega_hg,
            },
        )
    })
}

/// Ricci scalar of one sector by both methods.
///
/// # Safety
/// `chain` must be a live handle and `out` valid for one [`XyRicci`].
#[no_mangle]
pub unsafe extern "C" fn xy_ricci(chain: *const XyChain, sector_id: i32, out: *mut XyRicci) -> XyStatus {
    guard(|| {
        let c = chain_ref(chain)?;
        let r = ricci_scalar(&c.params, sector(sector_id)?)?;
        write(
            out,
            XyRicci {
                r_determinant: r.r_determinant,
                r_christoffel: r.r_christoffel,
                discrepancy: r.discrepancy,
                singular: r.singular as i32,
            },
        )
    })
}

/// Ground-state case (1..5) from exact diagonalization; L ≤ 13.
///
/// # Safety
/// `chain` must be a live handle and `out` valid for one int.
#[no_mangle]
pub unsafe extern "C" fn xy_classify_case(chain: *const XyChain, out: *mut i32) -> XyStatus {
    guard(|| {
        let c = chain_ref(chain)?;
        let label = classify_case(&c.params, CASE_TOL)?;
        write(out, label.tag.number() as i32)
    })
}

/// Build a size series of `quantity` at (γ, h) over `ls[0..n]` and pick its
/// decay model.
///
/// # Safety
/// `ls` must be valid for `n` values and `out` for one [`XyFit`].
#[no_mangle]
pub unsafe extern "C" fn xy_fit_decay(
    quantity: i32,
    gamma: f64,
    h: f64,
    ls: *const usize,
    n: usize,
    out: *mut XyFit,
) -> XyStatus {
    guard(|| {
        let q = match quantity {
            XY_QUANTITY_DELTA_E => Quantity::DeltaE,
            XY_QUANTITY_RICCI_NS => Quantity::RicciNS,
            XY_QUANTITY_RICCI_R => Quantity::RicciR,
            XY_QUANTITY_DELTA_RICCI => Quantity::DeltaRicci,
            _ => return Err(Fail(XyStatus::InvalidArgument, format!("unknown quantity {quantity}"))),
        };
        if ls.is_null() {
            return Err(null("ls"));
        }
        let lengths = std::slice::from_raw_parts(ls, n);
        let series = build_series(q, gamma, h, lengths)?;
        let fit = classify_decay(&series, &DecayConfig::default())?;
        let pick = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(f64::NAN);
        write(
            out,
            XyFit {
                model: match fit.model {
                    DecayModel::Exponential => XY_MODEL_EXPONENTIAL,
                    DecayModel::Powerlaw => XY_MODEL_POWERLAW,
                    DecayModel::Biexponential => XY_MODEL_BIEXPONENTIAL,
                    DecayModel::Erratic => XY_MODEL_ERRATIC,
                },
                exponent: [pick(&fit.exponents, 0), pick(&fit.exponents, 1)],
                r_squared: [pick(&fit.r_squared, 0), pick(&fit.r_squared, 1)],
                window_min: fit.window.0,
                window_max: fit.window.1,
            },
        )
    })
}
