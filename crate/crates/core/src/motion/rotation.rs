//! Continuous 6D rotation representation.
//!
//! A rotation is stored as its first two matrix columns; Gram-Schmidt recovers
//! the full orthonormal frame.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Inputs with a column (or Gram-Schmidt residual) shorter than this are rejected.
pub const DEGENERACY_TOL: f64 = 1e-8;
const ROTATION_TOL: f64 = 1e-6;

pub type Rot6d = [f64; 6];

pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    err <= tol && (r.determinant() - 1.0).abs() <= tol
}

pub fn rot6d_from_matrix(r: &Matrix3<f64>) -> Result<Rot6d> {
    if !r.iter().all(|v| v.is_finite()) || !is_rotation(r, ROTATION_TOL) {
        return Err(Error::InvalidRotation(format!(
            "matrix is not orthonormal with det +1 (det = {:.6})",
            r.determinant()
        )));
    }
    Ok([r[(0, 0)], r[(1, 0)], r[(2, 0)], r[(0, 1)], r[(1, 1)], r[(2, 1)]])
}

pub fn matrix_from_rot6d(v: &[f64]) -> Result<Matrix3<f64>> {
    if v.len() != 6 {
        return Err(Error::Shape(format!("6d rotation needs 6 values, got {}", v.len())));
    }
    let a_raw = Vector3::new(v[0], v[1], v[2]);
    let b_raw = Vector3::new(v[3], v[4], v[5]);
    let a_norm = a_raw.norm();
    if !(a_norm > DEGENERACY_TOL) {
        return Err(Error::Degenerate6d(format!("first column norm {a_norm:e}")));
    }
    let a = a_raw / a_norm;
    let resid = b_raw - a * a.dot(&b_raw);
    let r_norm = resid.norm();
    if !(r_norm > DEGENERACY_TOL) {
        return Err(Error::Degenerate6d(format!("second column is parallel to the first (residual {r_norm:e})")));
    }
    let b = resid / r_norm;
    let c = a.cross(&b);
    Ok(Matrix3::from_columns(&[a, b, c]))
}

/// Rotation about a unit `axis` by `angle` radians (Rodrigues).
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = axis.normalize();
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
}

/// Geodesic angle between two rotations.
pub fn relative_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let rel = a.transpose() * b;
    let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    c.acos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_round_trip() {
        assert_eq!(rot6d_from_matrix(&Matrix3::identity()).unwrap(), [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(matrix_from_rot6d(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap(), Matrix3::identity());
    }

    #[test]
    fn yaw_quarter_turn_columns() {
        // 90 degrees about +z: x -> y, y -> -x.
        let r = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_eq!(rot6d_from_matrix(&r).unwrap(), [0.0, 1.0, 0.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn scale_is_removed() {
        let r = matrix_from_rot6d(&[2.0, 0.0, 0.0, 0.0, 3.0, 0.0]).unwrap();
        assert!((r - Matrix3::identity()).abs().max() < 1e-15);
    }

    #[test]
    fn rejects_non_rotations() {
        let reflect = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(rot6d_from_matrix(&reflect), Err(Error::InvalidRotation(_))));
        assert!(matches!(rot6d_from_matrix(&(Matrix3::identity() * 2.0)), Err(Error::InvalidRotation(_))));
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(matches!(matrix_from_rot6d(&[0.0; 6]), Err(Error::Degenerate6d(_))));
        assert!(matches!(matrix_from_rot6d(&[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]), Err(Error::Degenerate6d(_))));
        assert!(matches!(matrix_from_rot6d(&[1e-9, 0.0, 0.0, 0.0, 1.0, 0.0]), Err(Error::Degenerate6d(_))));
    }

    fn brute_force_orthonormal(r: &Matrix3<f64>) -> bool {
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[(k, i)] * r[(k, j)]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-6 {
                    return false;
                }
            }
        }
        let det = r[(0, 0)] * (r[(1, 1)] * r[(2, 2)] - r[(1, 2)] * r[(2, 1)])
            - r[(0, 1)] * (r[(1, 0)] * r[(2, 2)] - r[(1, 2)] * r[(2, 0)])
            + r[(0, 2)] * (r[(1, 0)] * r[(2, 1)] - r[(1, 1)] * r[(2, 0)]);
        (det - 1.0).abs() <= 1e-6
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn gram_schmidt_output_is_a_rotation(v in prop::array::uniform6(-10.0f64..10.0)) {
            match matrix_from_rot6d(&v) {
                Ok(r) => prop_assert!(brute_force_orthonormal(&r)),
                Err(Error::Degenerate6d(_)) => {}
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }

    proptest! {
        #[test]
        fn matrix_round_trip(ax in prop::array::uniform3(-1.0f64..1.0), angle in -3.1f64..3.1) {
            let axis = Vector3::from(ax);
            prop_assume!(axis.norm() > 1e-3);
            let r = axis_angle(&axis, angle);
            let back = matrix_from_rot6d(&rot6d_from_matrix(&r).unwrap()).unwrap();
            prop_assert!((back - r).abs().max() < 1e-6);
        }
    }
}
