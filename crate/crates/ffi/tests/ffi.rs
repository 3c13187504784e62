use std::ffi::CStr;
use std::ptr;

use igr_ffi::*;

fn last_error() -> String {
    let p = igr_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Setup {
    model: *mut IgrModel,
    batch: *mut IgrBatch,
}

impl Setup {
    fn bilinear() -> Self {
        let mut model = ptr::null_mut();
        let mut batch = ptr::null_mut();
        unsafe {
            assert_eq!(igr_bilinear_new(1.0, 0.6, &mut model), IGR_OK);
            assert_eq!(igr_batch_regression([1.0].as_ptr(), 1, 1, [0.6].as_ptr(), 1, &mut batch), IGR_OK);
        }
        Setup { model, batch }
    }
}

impl Drop for Setup {
    fn drop(&mut self) {
        unsafe {
            igr_model_free(self.model);
            igr_batch_free(self.batch);
        }
    }
}

#[test]
fn bilinear_values() {
    let s = Setup::bilinear();
    let theta = [2.0, 1.0];
    unsafe {
        assert_eq!(igr_model_param_count(s.model), 2);
        let mut e = 0.0;
        assert_eq!(igr_loss(s.model, s.batch, theta.as_ptr(), 2, &mut e), IGR_OK);
        assert!((e - 0.98).abs() < 1e-12);

        let mut g = [0.0; 2];
        assert_eq!(igr_gradient(s.model, s.batch, theta.as_ptr(), 2, g.as_mut_ptr()), IGR_OK);
        assert!((g[0] - 1.4).abs() < 1e-12 && (g[1] - 2.8).abs() < 1e-12);

        // H = [[b², 2ab − y], [2ab − y, a²]] at (2, 1)
        let mut hv = [0.0; 2];
        assert_eq!(
            igr_hvp(s.model, s.batch, theta.as_ptr(), [1.0, 0.0].as_ptr(), 2, hv.as_mut_ptr()),
            IGR_OK
        );
        assert!((hv[0] - 1.0).abs() < 1e-12 && (hv[1] - 3.4).abs() < 1e-12);

        let mut r = 0.0;
        assert_eq!(igr_r_ig(s.model, s.batch, theta.as_ptr(), 2, &mut r), IGR_OK);
        assert!((r - 4.9).abs() < 1e-12);

        let mut em = 0.0;
        assert_eq!(igr_modified_loss(s.model, s.batch, theta.as_ptr(), 2, 0.1, &mut em), IGR_OK);
        assert!((em - (0.98 + 0.025 * 9.8)).abs() < 1e-12);

        let mut geo = IgrGeometry::default();
        assert_eq!(igr_geometry(s.model, s.batch, theta.as_ptr(), 2, 0.1, &mut geo), IGR_OK);
        assert!((geo.metric_det - 10.8).abs() < 1e-12);
        assert!((geo.angle - 9.8f64.sqrt().atan()).abs() < 1e-12);
    }
}

#[test]
fn gd_run_through_handles() {
    let s = Setup::bilinear();
    let mut traj = ptr::null_mut();
    unsafe {
        assert_eq!(
            igr_run_gd(s.model, s.batch, [2.8, 3.5].as_ptr(), 2, 0.025, 400, 10, &mut traj),
            IGR_OK
        );
        assert_eq!(igr_trajectory_termination(traj), IGR_TERMINATION_COMPLETED);
        assert_eq!(igr_trajectory_rows(traj), 41);
        let mut row = IgrRow::default();
        assert_eq!(igr_trajectory_row(traj, 0, &mut row), IGR_OK);
        assert_eq!(row.iteration, 0);
        assert!((row.loss - 42.32).abs() < 1e-12);
        assert_eq!(igr_trajectory_row(traj, 41, &mut row), IGR_INVALID_ARGUMENT);
        let mut end = [0.0; 2];
        assert_eq!(igr_trajectory_final_params(traj, end.as_mut_ptr(), 2), IGR_OK);
        assert!((end[0] * end[1] - 0.6).abs() < 1e-9);
        assert_eq!(igr_trajectory_final_params(traj, end.as_mut_ptr(), 3), IGR_DIMENSION_MISMATCH);
        igr_trajectory_free(traj);
    }
}

#[test]
fn egr_run_converges() {
    let s = Setup::bilinear();
    let mut traj = ptr::null_mut();
    unsafe {
        assert_eq!(
            igr_run_egr(s.model, s.batch, [2.8, 3.5].as_ptr(), 2, 0.25, 1e-3, 200_000, 1000, &mut traj),
            IGR_OK
        );
        assert_eq!(igr_trajectory_termination(traj), IGR_TERMINATION_CONVERGED);
        igr_trajectory_free(traj);
    }
}

#[test]
fn errors_set_codes_and_messages() {
    let s = Setup::bilinear();
    unsafe {
        let mut e = 0.0;
        assert_eq!(igr_loss(s.model, s.batch, [1.0].as_ptr(), 1, &mut e), IGR_DIMENSION_MISMATCH);
        assert!(last_error().contains("expected 2"));
        assert_eq!(igr_loss(ptr::null(), s.batch, [1.0, 1.0].as_ptr(), 2, &mut e), IGR_NULL_POINTER);
        assert!(last_error().contains("model"));
        assert_eq!(igr_loss(s.model, s.batch, [1.0, 1.0].as_ptr(), 2, ptr::null_mut()), IGR_NULL_POINTER);
        assert_eq!(
            igr_modified_loss(s.model, s.batch, [1.0, 1.0].as_ptr(), 2, -1.0, &mut e),
            IGR_INVALID_ARGUMENT
        );
        let mut m = ptr::null_mut();
        assert_eq!(igr_mlp_new([4usize, 3].as_ptr(), 2, 7, 0, &mut m), IGR_INVALID_ARGUMENT);
        assert!(m.is_null());
        assert_eq!(igr_trajectory_termination(ptr::null()), -1);
        assert_eq!(igr_model_param_count(ptr::null()), 0);
        igr_model_free(ptr::null_mut());
    }
}

#[test]
fn mlp_and_least_squares_handles() {
    unsafe {
        let mut mlp = ptr::null_mut();
        assert_eq!(igr_mlp_new([3usize, 4, 2].as_ptr(), 3, IGR_ACTIVATION_TANH, 5, &mut mlp), IGR_OK);
        assert_eq!(igr_model_param_count(mlp), 3 * 4 + 4 + 4 * 2 + 2);
        let mut batch = ptr::null_mut();
        let x = [0.1, 0.2, 0.3, -0.4, 0.5, 0.0];
        assert_eq!(igr_batch_classes(x.as_ptr(), 2, 3, [0usize, 1].as_ptr(), 2, &mut batch), IGR_OK);
        let theta = vec![0.1; 26];
        let mut e = 0.0;
        assert_eq!(igr_loss(mlp, batch, theta.as_ptr(), 26, &mut e), IGR_OK);
        assert!(e.is_finite() && e > 0.0);
        let mut bad = ptr::null_mut();
        assert_eq!(igr_batch_classes(x.as_ptr(), 2, 3, [0usize, 2].as_ptr(), 2, &mut bad), IGR_INVALID_ARGUMENT);
        igr_batch_free(batch);
        igr_model_free(mlp);

        let mut ls = ptr::null_mut();
        assert_eq!(igr_least_squares_new(3, 0, 2, 0, &mut ls), IGR_OK);
        assert_eq!(igr_model_param_count(ls), 6);
        igr_model_free(ls);
    }
}

#[test]
fn header_declares_the_interface() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/igr.h")).unwrap();
    for name in [
        "igr_last_error",
        "igr_bilinear_new",
        "igr_mlp_new",
        "igr_least_squares_new",
        "igr_batch_classes",
        "igr_batch_regression",
        "igr_loss",
        "igr_gradient",
        "igr_hvp",
        "igr_r_ig",
        "igr_modified_loss",
        "igr_geometry",
        "igr_run_gd",
        "igr_run_egr",
        "igr_trajectory_row",
        "igr_trajectory_free",
        "typedef struct IgrModel IgrModel",
        "IGR_NULL_POINTER",
    ] {
        assert!(header.contains(name), "{name} missing from igr.h");
    }
}
