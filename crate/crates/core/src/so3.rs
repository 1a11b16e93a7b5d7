//! Rotation primitives and the `δ = a·sin θ` Rodrigues parameterization.
//!
//! A correction rotation is written as
//!
//! ```text
//! Ψ(δ) = I − S(δ) + β(‖δ‖)·S(δ)²,   β(s) = (1 − √(1 − s²)) / s²
//! ```
//!
//! where `S` is the skew-symmetric (cross-product) matrix and `δ = a·sin θ`
//! for a unit axis `a` and angle `θ`. Note the minus sign on the linear term:
//! `Ψ(a·sin θ)` is the rotation by `−θ` about `a`, the transpose of the
//! textbook Rodrigues matrix. The parameterization covers `θ ∈ [0°, 90°]`,
//! so `‖δ‖ ≤ 1` is a hard precondition.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{PgoError, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance on `RᵀR = I` and `det R = 1` for [`Rotation::from_matrix`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Largest norm a correction vector is clamped to when a solve overshoots the unit ball.
pub const DELTA_CLAMP_NORM: f64 = 1.0 - 1e-9;

const BETA_SERIES_SWITCH: f64 = 1e-4;
const SINGULAR_TOLERANCE: f64 = 1e-12;

/// The skew-symmetric matrix `S(a)` with `S(a)·v = a × v`.
pub fn skew(a: &Vec3) -> Mat3 {
    Mat3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// The 3-vector of the skew-symmetric part of `m`, so `skew(vee(m)) = (m − mᵀ)/2`.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

pub fn skew_part(m: &Mat3) -> Mat3 {
    (m - m.transpose()) * 0.5
}

pub fn sym_part(m: &Mat3) -> Mat3 {
    (m + m.transpose()) * 0.5
}

/// `β(s) = (1 − √(1 − s²)) / s²`, i.e. `(1 − cos θ)/sin² θ` for `s = sin θ`.
///
/// Evaluated as `1 / (1 + √(1 − s²))`, which is the same function without the
/// cancellation in the numerator; below `s = 1e-4` a four-term series in `s²`
/// is used so the value at zero is the analytic limit `1/2`.
pub fn beta(s: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) {
        let norm = s.abs();
        return Err(PgoError::Domain {
            norm: s,
            excess: if s.is_nan() { f64::NAN } else { norm - 1.0 },
        });
    }
    Ok(beta_unchecked(s))
}

fn beta_unchecked(s: f64) -> f64 {
    let x = s * s;
    if s < BETA_SERIES_SWITCH {
        beta_series(x)
    } else {
        1.0 / (1.0 + (1.0 - x).sqrt())
    }
}

/// Taylor expansion of `β` in `x = s²`: `1/2 + x/8 + x²/16 + 5x³/128`.
fn beta_series(x: f64) -> f64 {
    0.5 + x * (0.125 + x * (0.0625 + x * (5.0 / 128.0)))
}

/// A proper rotation matrix (`RᵀR = I`, `det R = 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Wraps `m` after checking orthonormality and determinant to [`ROTATION_TOLERANCE`].
    pub fn from_matrix(m: Mat3) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(PgoError::NotARotation("non-finite entries".into()));
        }
        let gram_err = (m.transpose() * m - Mat3::identity()).abs().max();
        let det = m.determinant();
        if gram_err > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(PgoError::NotARotation(format!(
                "max |RᵀR − I| = {gram_err:e}, det = {det}"
            )));
        }
        Ok(Rotation(m))
    }

    /// Wraps `m` without validation. The caller guarantees the rotation invariants.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    /// Right-handed rotation by `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let unit = nalgebra::Unit::new_normalize(*axis);
        Rotation(*nalgebra::Rotation3::from_axis_angle(&unit, angle).matrix())
    }

    /// Rotation from a quaternion given in `(x, y, z, w)` order; the quaternion is normalized.
    pub fn from_quaternion(x: f64, y: f64, z: f64, w: f64) -> Self {
        let q = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
        Rotation(*q.to_rotation_matrix().matrix())
    }

    /// Quaternion `(x, y, z, w)` with `w ≥ 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let r = nalgebra::Rotation3::from_matrix_unchecked(self.0);
        let q = UnitQuaternion::from_rotation_matrix(&r);
        let mut c = [q.i, q.j, q.k, q.w];
        if c[3] < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        c
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        vee(&self.0).norm().atan2((self.0.trace() - 1.0) * 0.5)
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl std::ops::Mul<&Rotation> for &Rotation {
    type Output = Rotation;

    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

fn check_unit_ball(delta: &Vec3) -> Result<f64> {
    let norm = delta.norm();
    if norm.is_nan() || norm > 1.0 {
        return Err(PgoError::Domain {
            norm,
            excess: norm - 1.0,
        });
    }
    Ok(norm)
}

/// `Ψ(δ) = I − S(δ) + β(‖δ‖)·S(δ)²`.
pub fn rodrigues(delta: &Vec3) -> Result<Rotation> {
    let norm = check_unit_ball(delta)?;
    let s = skew(delta);
    Ok(Rotation(Mat3::identity() - s + s * s * beta_unchecked(norm)))
}

/// Inverse of [`rodrigues`]: the `δ` with `rodrigues(δ) = r`, or `None` when the
/// rotation angle exceeds 90° and no such `δ` exists.
pub fn delta_of(r: &Rotation) -> Option<Vec3> {
    if r.0.trace() < 1.0 {
        return None;
    }
    Some(-vee(&r.0))
}

/// Scales `delta` back inside the unit ball if it left it; returns whether it was clamped.
pub fn clamp_delta(delta: &Vec3) -> (Vec3, bool) {
    let norm = delta.norm();
    if norm > 1.0 {
        (delta * (DELTA_CLAMP_NORM / norm), true)
    } else {
        (*delta, false)
    }
}

/// The second-order remainder `S₂(δᵢ, δⱼ)` defined by
/// `Ψ(δⱼ)·Ψ(δᵢ)ᵀ = I − S(δⱼ) + S(δᵢ) − S₂(δᵢ, δⱼ)`.
pub fn s2_remainder(delta_i: &Vec3, delta_j: &Vec3) -> Result<Mat3> {
    let beta_i = beta_unchecked(check_unit_ball(delta_i)?);
    let beta_j = beta_unchecked(check_unit_ball(delta_j)?);
    let si = skew(delta_i);
    let sj = skew(delta_j);
    let si2 = si * si;
    let sj2 = sj * sj;
    Ok(sj * si + sj * si2 * beta_i
        - sj2 * si * beta_j
        - sj2 * si2 * (beta_i * beta_j)
        - sj2 * beta_j
        - si2 * beta_i)
}

/// Nearest rotation to `m` in Frobenius norm, via SVD with the sign of the
/// smallest singular direction flipped when needed to keep `det = +1`.
pub fn project_to_so3(m: &Mat3) -> Result<Rotation> {
    let svd = m.svd(true, true);
    let sigma_min = svd.singular_values.min();
    if !(sigma_min >= SINGULAR_TOLERANCE) {
        return Err(PgoError::Degenerate {
            sigma_min,
            vertex: None,
        });
    }
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    let mut correction = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        // nalgebra sorts singular values in decreasing order
        let (min_index, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
        correction[(min_index, min_index)] = -1.0;
    }
    Ok(Rotation(u * correction * v_t))
}
