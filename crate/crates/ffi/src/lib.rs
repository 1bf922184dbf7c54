//! C ABI over the reference quadrilateral expansion: construction from basis
//! and points keys, coordinates, forward/backward transforms and integration.
//!
//! Every fallible call returns a [`SpecStatus`]; on failure the message is
//! available from [`spec_last_error_message`] on the same thread. Panics
//! never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use spechp::basis::{BasisKey, BasisType};
use spechp::quadrature::{PointsKey, PointsType};
use spechp::stdregions::StdExpansion;
use spechp::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    SizeMismatch = 3,
    Internal = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecPointsType {
    GaussLegendre = 0,
    GaussLobattoLegendre = 1,
    GaussRadauMinusLegendre = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecBasisType {
    ModifiedA = 0,
    LagrangeGll = 1,
}

/// Opaque tensor-product expansion on the reference square.
pub struct SpecStdQuadExp {
    exp: StdExpansion,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SpecStatus {
    match e {
        Error::SizeMismatch { .. } => SpecStatus::SizeMismatch,
        _ => SpecStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (SpecStatus, String)>) -> SpecStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            SpecStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal error (panic)".into());
            SpecStatus::Internal
        }
    }
}

fn lift(e: Error) -> (SpecStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (SpecStatus, String) {
    (SpecStatus::NullPointer, format!("{what} is null"))
}

fn check_len(what: &str, expected: usize, actual: usize) -> Result<(), (SpecStatus, String)> {
    if expected != actual {
        return Err((
            SpecStatus::SizeMismatch,
            format!("{what}: expected {expected} values, got {actual}"),
        ));
    }
    Ok(())
}

unsafe fn input<'a>(what: &str, ptr: *const f64, len: usize) -> Result<&'a [f64], (SpecStatus, String)> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn output<'a>(what: &str, ptr: *mut f64, len: usize) -> Result<&'a mut [f64], (SpecStatus, String)> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn handle<'a>(h: *const SpecStdQuadExp) -> Result<&'a SpecStdQuadExp, (SpecStatus, String)> {
    h.as_ref().ok_or_else(|| null("expansion handle"))
}

/// Message of the last failed call on this thread (empty after a success).
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn spec_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a quadrilateral expansion with the same basis and points key in
/// both directions; `num_modes` counts modes per direction.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn spec_quad_new(
    basis: SpecBasisType,
    num_modes: usize,
    points: SpecPointsType,
    num_points: usize,
    out: *mut *mut SpecStdQuadExp,
) -> SpecStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output handle pointer"));
        }
        let ptype = match points {
            SpecPointsType::GaussLegendre => PointsType::GaussLegendre,
            SpecPointsType::GaussLobattoLegendre => PointsType::GaussLobattoLegendre,
            SpecPointsType::GaussRadauMinusLegendre => PointsType::GaussRadauMinusLegendre,
        };
        let btype = match basis {
            SpecBasisType::ModifiedA => BasisType::ModifiedA,
            SpecBasisType::LagrangeGll => BasisType::LagrangeGll,
        };
        let pkey = PointsKey::new(num_points, ptype).map_err(lift)?;
        let bkey = BasisKey::new(btype, num_modes, pkey).map_err(lift)?;
        let exp = StdExpansion::quad(bkey, bkey).map_err(lift)?;
        *out = Box::into_raw(Box::new(SpecStdQuadExp { exp }));
        Ok(())
    })
}

/// Releases a handle from [`spec_quad_new`]; null is ignored.
///
/// # Safety
/// `h` must be null or a handle that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn spec_quad_free(h: *mut SpecStdQuadExp) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Number of modal coefficients (0 for a null handle).
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spec_quad_num_coeffs(h: *const SpecStdQuadExp) -> usize {
    h.as_ref().map_or(0, |q| q.exp.num_coeffs())
}

/// Number of quadrature points (0 for a null handle).
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spec_quad_num_points(h: *const SpecStdQuadExp) -> usize {
    h.as_ref().map_or(0, |q| q.exp.num_points())
}

/// Writes the quadrature point coordinates into `x` and `y` (`len` each).
///
/// # Safety
/// `h` must be a live handle; `x` and `y` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn spec_quad_get_coords(h: *const SpecStdQuadExp, x: *mut f64, y: *mut f64, len: usize) -> SpecStatus {
    guard(|| {
        let q = handle(h)?;
        check_len("coordinate arrays", q.exp.num_points(), len)?;
        let (x, y) = (output("x", x, len)?, output("y", y, len)?);
        for (k, p) in q.exp.coords().into_iter().enumerate() {
            x[k] = p[0];
            y[k] = p[1];
        }
        Ok(())
    })
}

/// Galerkin projection of point values onto the modal coefficients.
///
/// # Safety
/// `h` must be a live handle; `phys` must hold `nphys` readable doubles and
/// `coeffs` `ncoeffs` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn spec_quad_fwd_trans(
    h: *const SpecStdQuadExp,
    phys: *const f64,
    nphys: usize,
    coeffs: *mut f64,
    ncoeffs: usize,
) -> SpecStatus {
    guard(|| {
        let q = handle(h)?;
        check_len("coefficient array", q.exp.num_coeffs(), ncoeffs)?;
        let c = q.exp.fwd_trans(input("phys", phys, nphys)?).map_err(lift)?;
        output("coeffs", coeffs, ncoeffs)?.copy_from_slice(&c);
        Ok(())
    })
}

/// Evaluates modal coefficients at the quadrature points.
///
/// # Safety
/// `h` must be a live handle; `coeffs` must hold `ncoeffs` readable doubles
/// and `phys` `nphys` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn spec_quad_bwd_trans(
    h: *const SpecStdQuadExp,
    coeffs: *const f64,
    ncoeffs: usize,
    phys: *mut f64,
    nphys: usize,
) -> SpecStatus {
    guard(|| {
        let q = handle(h)?;
        check_len("point array", q.exp.num_points(), nphys)?;
        let v = q.exp.bwd_trans(input("coeffs", coeffs, ncoeffs)?).map_err(lift)?;
        output("phys", phys, nphys)?.copy_from_slice(&v);
        Ok(())
    })
}

/// Quadrature integral of point values over the reference square.
///
/// # Safety
/// `h` must be a live handle; `phys` must hold `nphys` readable doubles and
/// `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spec_quad_integral(
    h: *const SpecStdQuadExp,
    phys: *const f64,
    nphys: usize,
    result: *mut f64,
) -> SpecStatus {
    guard(|| {
        let q = handle(h)?;
        if result.is_null() {
            return Err(null("result"));
        }
        *result = q.exp.integral(input("phys", phys, nphys)?).map_err(lift)?;
        Ok(())
    })
}
