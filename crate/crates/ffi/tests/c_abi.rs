use std::ffi::CStr;
use std::ptr;

use spechp_ffi::*;

fn cos_cos_quad() -> *mut SpecStdQuadExp {
    let mut h = ptr::null_mut();
    let s = unsafe { spec_quad_new(SpecBasisType::ModifiedA, 8, SpecPointsType::GaussLobattoLegendre, 9, &mut h) };
    assert_eq!(s, SpecStatus::Ok);
    h
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(spec_last_error_message()) }.to_string_lossy().into_owned()
}

#[test]
fn cos_cos_projection_through_the_c_abi() {
    let h = cos_cos_quad();
    let n = unsafe { spec_quad_num_points(h) };
    assert_eq!(n, 81);
    assert_eq!(unsafe { spec_quad_num_coeffs(h) }, 64);
    let (mut x, mut y) = (vec![0.0; n], vec![0.0; n]);
    assert_eq!(unsafe { spec_quad_get_coords(h, x.as_mut_ptr(), y.as_mut_ptr(), n) }, SpecStatus::Ok);
    let f: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a.cos() * b.cos()).collect();
    let mut c = vec![0.0; 64];
    assert_eq!(unsafe { spec_quad_fwd_trans(h, f.as_ptr(), n, c.as_mut_ptr(), 64) }, SpecStatus::Ok);
    let mut integral = 0.0;
    assert_eq!(unsafe { spec_quad_integral(h, f.as_ptr(), n, &mut integral) }, SpecStatus::Ok);
    assert_eq!(format!("{integral:.4}"), "2.8323");
    assert!((integral - 4.0 * 1f64.sin().powi(2)).abs() < 1e-8);
    let ones = vec![1.0; n];
    assert_eq!(unsafe { spec_quad_integral(h, ones.as_ptr(), n, &mut integral) }, SpecStatus::Ok);
    assert!((integral - 4.0).abs() < 1e-13);
    unsafe { spec_quad_free(h) };
}

#[test]
fn transforms_round_trip_unit_vectors() {
    let h = cos_cos_quad();
    let (nc, np) = unsafe { (spec_quad_num_coeffs(h), spec_quad_num_points(h)) };
    for k in 0..nc {
        let mut e = vec![0.0; nc];
        e[k] = 1.0;
        let mut phys = vec![0.0; np];
        let mut back = vec![0.0; nc];
        unsafe {
            assert_eq!(spec_quad_bwd_trans(h, e.as_ptr(), nc, phys.as_mut_ptr(), np), SpecStatus::Ok);
            assert_eq!(spec_quad_fwd_trans(h, phys.as_ptr(), np, back.as_mut_ptr(), nc), SpecStatus::Ok);
        }
        for (a, b) in e.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12, "mode {k}: {}", (a - b).abs());
        }
    }
    unsafe { spec_quad_free(h) };
}

#[test]
fn errors_carry_codes_and_messages() {
    let h = cos_cos_quad();
    let v = vec![0.0; 10];
    let mut c = vec![0.0; 64];
    let s = unsafe { spec_quad_fwd_trans(h, v.as_ptr(), 10, c.as_mut_ptr(), 64) };
    assert_eq!(s, SpecStatus::SizeMismatch);
    let msg = last_error();
    assert!(msg.contains("81") && msg.contains("10"), "{msg}");
    let s = unsafe { spec_quad_integral(ptr::null(), v.as_ptr(), 10, ptr::null_mut()) };
    assert_eq!(s, SpecStatus::NullPointer);
    let mut bad = ptr::null_mut();
    let s = unsafe { spec_quad_new(SpecBasisType::ModifiedA, 4, SpecPointsType::GaussLobattoLegendre, 1, &mut bad) };
    assert_eq!(s, SpecStatus::InvalidArgument);
    assert!(bad.is_null());
    assert!(!last_error().is_empty());
    let mut integral = 0.0;
    let ones = vec![1.0; 81];
    assert_eq!(unsafe { spec_quad_integral(h, ones.as_ptr(), 81, &mut integral) }, SpecStatus::Ok);
    assert_eq!(last_error(), "");
    unsafe {
        spec_quad_free(h);
        spec_quad_free(ptr::null_mut());
    }
}

#[test]
fn generated_header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/spechp.h")).unwrap();
    for name in [
        "spec_quad_new",
        "spec_quad_free",
        "spec_quad_fwd_trans",
        "spec_quad_bwd_trans",
        "spec_quad_integral",
        "spec_quad_get_coords",
        "spec_last_error_message",
        "SPEC_STATUS_SIZE_MISMATCH",
        "typedef struct SpecStdQuadExp SpecStdQuadExp",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}
