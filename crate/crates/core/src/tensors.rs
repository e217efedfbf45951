//! Symmetric tensor algebra in Voigt notation.
//!
//! Fourth-order tensors use the engineering-shear Voigt ordering
//! `(11, 22, 33, 23, 13, 12)`: a stress vector `σ = A ε` pairs with the
//! engineering strain vector `ε = (ε11, ε22, ε33, 2ε23, 2ε13, 2ε12)`. With
//! this convention the Voigt matrix entries coincide with the tensor
//! components `A_ijkl`, but a rotation is *not* an orthogonal similarity of
//! the Voigt matrix. Rotations are therefore carried out in the Mandel
//! (Kelvin) basis, where they are orthogonal, and mapped back. Eigenvalue
//! statements about fourth-order tensors refer to the Mandel form.

use nalgebra::{Matrix3, Matrix6, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};

pub type Mat6 = Matrix6<f64>;
pub type Mat3 = Matrix3<f64>;

/// Voigt index pairs in engineering order.
pub const VOIGT_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];

/// Relative eigenvalue floor added to `B` and `K` before inversion.
pub const INVERSE_FLOOR_REL: f64 = 1e-12;

/// A fourth-order tensor with major and minor symmetries, stored as the 21
/// unique entries of its 6×6 Voigt matrix (upper triangle, row-major).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymTensor4 {
    upper: [f64; 21],
}

/// A symmetric 3×3 matrix stored as its 6 upper-triangle entries
/// `(11, 12, 13, 22, 23, 33)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix3 {
    upper: [f64; 6],
}

#[inline]
fn upper_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * n - i * (i + 1) / 2 + j
}

impl SymTensor4 {
    pub const LEN: usize = 21;

    pub fn zeros() -> Self {
        Self { upper: [0.0; 21] }
    }

    pub fn identity() -> Self {
        Self::from_matrix(&Mat6::identity())
    }

    pub fn from_upper(upper: [f64; 21]) -> Self {
        Self { upper }
    }

    /// Builds the tensor from the symmetric part of `m`.
    pub fn from_matrix(m: &Mat6) -> Self {
        let mut upper = [0.0; 21];
        for i in 0..6 {
            for j in i..6 {
                upper[upper_index(6, i, j)] = 0.5 * (m[(i, j)] + m[(j, i)]);
            }
        }
        Self { upper }
    }

    /// Isotropic stiffness from Young's modulus and Poisson ratio.
    pub fn isotropic(young: f64, poisson: f64) -> Self {
        let lambda = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
        let mu = young / (2.0 * (1.0 + poisson));
        let mut m = Mat6::zeros();
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] = lambda;
            }
            m[(i, i)] += 2.0 * mu;
            m[(i + 3, i + 3)] = mu;
        }
        Self::from_matrix(&m)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper[upper_index(6, i, j)]
    }

    pub fn upper(&self) -> &[f64; 21] {
        &self.upper
    }

    pub fn to_matrix(&self) -> Mat6 {
        Mat6::from_fn(|i, j| self.get(i, j))
    }

    /// Mandel form `W A W` with `W = diag(1, 1, 1, √2, √2, √2)`.
    pub fn to_mandel(&self) -> Mat6 {
        let w = mandel_weights();
        Mat6::from_fn(|i, j| w[i] * w[j] * self.get(i, j))
    }

    pub fn from_mandel(m: &Mat6) -> Self {
        let w = mandel_weights();
        Self::from_matrix(&Mat6::from_fn(|i, j| m[(i, j)] / (w[i] * w[j])))
    }

    /// Eigenvalues of the Mandel form, ascending.
    pub fn kelvin_eigenvalues(&self) -> [f64; 6] {
        sorted_eigenvalues6(&self.to_mandel())
    }

    pub fn is_spd(&self) -> bool {
        self.to_matrix().cholesky().is_some()
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut upper = self.upper;
        upper.iter_mut().for_each(|v| *v *= s);
        Self { upper }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut upper = self.upper;
        upper
            .iter_mut()
            .zip(other.upper.iter())
            .for_each(|(a, b)| *a += b);
        Self { upper }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        frobenius(self, self)
    }

    pub fn max_abs(&self) -> f64 {
        self.upper.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl SymMatrix3 {
    pub const LEN: usize = 6;

    pub fn zeros() -> Self {
        Self { upper: [0.0; 6] }
    }

    pub fn identity() -> Self {
        Self::diag(1.0, 1.0, 1.0)
    }

    pub fn diag(a: f64, b: f64, c: f64) -> Self {
        Self {
            upper: [a, 0.0, 0.0, b, 0.0, c],
        }
    }

    pub fn from_upper(upper: [f64; 6]) -> Self {
        Self { upper }
    }

    pub fn from_matrix(m: &Mat3) -> Self {
        let mut upper = [0.0; 6];
        for i in 0..3 {
            for j in i..3 {
                upper[upper_index(3, i, j)] = 0.5 * (m[(i, j)] + m[(j, i)]);
            }
        }
        Self { upper }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper[upper_index(3, i, j)]
    }

    pub fn upper(&self) -> &[f64; 6] {
        &self.upper
    }

    pub fn to_matrix(&self) -> Mat3 {
        Mat3::from_fn(|i, j| self.get(i, j))
    }

    pub fn trace(&self) -> f64 {
        self.get(0, 0) + self.get(1, 1) + self.get(2, 2)
    }

    /// Eigenvalues, ascending.
    pub fn eigenvalues(&self) -> [f64; 3] {
        let e = SymmetricEigen::new(self.to_matrix()).eigenvalues;
        let mut v = [e[0], e[1], e[2]];
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut upper = self.upper;
        upper.iter_mut().for_each(|v| *v *= s);
        Self { upper }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut upper = self.upper;
        upper
            .iter_mut()
            .zip(other.upper.iter())
            .for_each(|(a, b)| *a += b);
        Self { upper }
    }

    pub fn is_zero(&self) -> bool {
        self.upper.iter().all(|v| *v == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.upper.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Voigt vector `(11, 22, 33, 23, 13, 12)`.
    pub fn to_voigt(&self) -> [f64; 6] {
        let mut v = [0.0; 6];
        for (k, &(i, j)) in VOIGT_PAIRS.iter().enumerate() {
            v[k] = self.get(i, j);
        }
        v
    }

    pub fn from_voigt(v: &[f64; 6]) -> Self {
        let mut m = Mat3::zeros();
        for (k, &(i, j)) in VOIGT_PAIRS.iter().enumerate() {
            m[(i, j)] = v[k];
            m[(j, i)] = v[k];
        }
        Self::from_matrix(&m)
    }
}

/// In-plane rotation angle about the z-axis, restricted to `[0, π]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct RotationAngle(f64);

impl RotationAngle {
    pub fn new(phi: f64) -> Result<Self> {
        if (0.0..=PI).contains(&phi) {
            Ok(Self(phi))
        } else {
            Err(Error::InvalidParams(format!(
                "rotation angle {phi} outside [0, π]"
            )))
        }
    }

    pub fn zero() -> Self {
        Self(0.0)
    }

    pub fn radians(self) -> f64 {
        self.0
    }
}

fn mandel_weights() -> [f64; 6] {
    [1.0, 1.0, 1.0, SQRT_2, SQRT_2, SQRT_2]
}

fn sorted_eigenvalues6(m: &Mat6) -> [f64; 6] {
    let e = SymmetricEigen::new(*m).eigenvalues;
    let mut v = [0.0; 6];
    v.iter_mut().zip(e.iter()).for_each(|(a, b)| *a = *b);
    v.sort_by(f64::total_cmp);
    v
}

/// Rotation matrix about z by `phi` (any real angle).
pub fn z_rotation(phi: f64) -> Mat3 {
    let (s, c) = phi.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Orthogonal 6×6 rotation acting on Mandel vectors, built from a 3×3
/// rotation `r`: `Q_IJ = E_I : (r E_J rᵀ)` for the orthonormal Mandel basis.
pub fn mandel_rotation(r: &Mat3) -> Mat6 {
    let basis: Vec<Mat3> = (0..6)
        .map(|k| {
            let (i, j) = VOIGT_PAIRS[k];
            let mut e = Mat3::zeros();
            if i == j {
                e[(i, i)] = 1.0;
            } else {
                e[(i, j)] = 1.0 / SQRT_2;
                e[(j, i)] = 1.0 / SQRT_2;
            }
            e
        })
        .collect();
    Mat6::from_fn(|a, b| {
        let rotated = r * basis[b] * r.transpose();
        basis[a].component_mul(&rotated).sum()
    })
}

/// Stress-form Voigt rotation (Bond matrix) for an arbitrary z-angle.
pub fn voigt_stress_rotation(phi: f64) -> Mat6 {
    let q = mandel_rotation(&z_rotation(phi));
    let w = mandel_weights();
    Mat6::from_fn(|i, j| q[(i, j)] * w[j] / w[i])
}

/// Strain-form Voigt rotation, the inverse transpose of the stress form.
pub fn voigt_strain_rotation(phi: f64) -> Mat6 {
    let q = mandel_rotation(&z_rotation(phi));
    let w = mandel_weights();
    Mat6::from_fn(|i, j| q[(i, j)] * w[i] / w[j])
}

/// Voigt-form rotation operator `Q₆` so that `Q₆ A Q₆ᵀ` is the stiffness
/// rotated by `phi` about z.
pub fn voigt_rotation_6(phi: RotationAngle) -> Mat6 {
    voigt_stress_rotation(phi.radians())
}

pub fn rotate_elasticity(a: &SymTensor4, phi: RotationAngle) -> SymTensor4 {
    rotate_elasticity_by(a, phi.radians())
}

pub fn rotate_elasticity_by(a: &SymTensor4, phi: f64) -> SymTensor4 {
    let q = voigt_stress_rotation(phi);
    SymTensor4::from_matrix(&(q * a.to_matrix() * q.transpose()))
}

/// Rotates a compliance (inverse stiffness) so that
/// `rotate_compliance(A⁻¹, φ) = rotate_elasticity(A, φ)⁻¹`.
pub fn rotate_compliance(s: &SymTensor4, phi: f64) -> SymTensor4 {
    let n = voigt_strain_rotation(phi);
    SymTensor4::from_matrix(&(n * s.to_matrix() * n.transpose()))
}

pub fn rotate_s3(m: &SymMatrix3, phi: RotationAngle) -> SymMatrix3 {
    rotate_s3_by(m, phi.radians())
}

pub fn rotate_s3_by(m: &SymMatrix3, phi: f64) -> SymMatrix3 {
    let q = z_rotation(phi);
    SymMatrix3::from_matrix(&(q * m.to_matrix() * q.transpose()))
}

/// Frobenius inner product `Σ XᵢⱼYᵢⱼ` of two symmetric matrices.
pub trait Frobenius {
    fn frobenius(&self, other: &Self) -> f64;
}

impl Frobenius for SymTensor4 {
    fn frobenius(&self, other: &Self) -> f64 {
        let mut diag = 0.0;
        let mut off = 0.0;
        let mut k = 0;
        for i in 0..6 {
            for j in i..6 {
                let p = self.upper[k] * other.upper[k];
                if i == j {
                    diag += p;
                } else {
                    off += p;
                }
                k += 1;
            }
        }
        diag + 2.0 * off
    }
}

impl Frobenius for SymMatrix3 {
    fn frobenius(&self, other: &Self) -> f64 {
        let u = &self.upper;
        let v = &other.upper;
        u[0] * v[0] + u[3] * v[3] + u[5] * v[5] + 2.0 * (u[1] * v[1] + u[2] * v[2] + u[4] * v[4])
    }
}

impl Frobenius for Mat6 {
    fn frobenius(&self, other: &Self) -> f64 {
        self.component_mul(other).sum()
    }
}

impl Frobenius for Mat3 {
    fn frobenius(&self, other: &Self) -> f64 {
        self.component_mul(other).sum()
    }
}

pub fn frobenius<T: Frobenius>(x: &T, y: &T) -> f64 {
    x.frobenius(y)
}

fn min_eigenvalue6(m: &Mat6) -> f64 {
    sorted_eigenvalues6(m)[0]
}

/// Inverse of an SPD stiffness. No floor is applied.
pub fn spd_inverse(a: &SymTensor4) -> Result<SymTensor4> {
    let m = a.to_matrix();
    match m.cholesky() {
        Some(ch) => Ok(SymTensor4::from_matrix(&ch.inverse())),
        None => Err(Error::NotPositiveDefinite {
            min_eigenvalue: min_eigenvalue6(&m),
        }),
    }
}

/// Inverse of a symmetric PSD 3×3 matrix after adding
/// `INVERSE_FLOOR_REL · trace / 3` to the diagonal.
pub fn spd_inverse3(x: &SymMatrix3) -> Result<SymMatrix3> {
    let floor = INVERSE_FLOOR_REL * x.trace().abs() / 3.0;
    let m = x.to_matrix() + Mat3::identity() * floor;
    let min_eig = x.eigenvalues()[0] + floor;
    if !(min_eig > 0.0) || min_eig < floor {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: min_eig,
        });
    }
    match m.cholesky() {
        Some(ch) => Ok(SymMatrix3::from_matrix(&ch.inverse())),
        None => Err(Error::NotPositiveDefinite {
            min_eigenvalue: min_eig,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn orthotropic() -> SymTensor4 {
        let mut m = Mat6::zeros();
        m[(0, 0)] = 3.0;
        m[(1, 1)] = 2.0;
        m[(2, 2)] = 1.5;
        m[(0, 1)] = 0.7;
        m[(1, 0)] = 0.7;
        m[(0, 2)] = 0.4;
        m[(2, 0)] = 0.4;
        m[(1, 2)] = 0.5;
        m[(2, 1)] = 0.5;
        m[(3, 3)] = 0.6;
        m[(4, 4)] = 0.8;
        m[(5, 5)] = 0.9;
        SymTensor4::from_matrix(&m)
    }

    fn max_diff6(a: &SymTensor4, b: &SymTensor4) -> f64 {
        a.sub(b).max_abs()
    }

    #[test]
    fn rotation_at_zero_is_identity() {
        let q = voigt_rotation_6(RotationAngle::zero());
        assert!((q - Mat6::identity()).abs().max() < 1e-15);
    }

    #[test]
    fn half_turn_leaves_orthotropic_tensor_unchanged() {
        let a = orthotropic();
        let r = rotate_elasticity(&a, RotationAngle::new(PI).unwrap());
        assert!(max_diff6(&a, &r) < 1e-14);
    }

    #[test]
    fn quarter_turn_swaps_in_plane_axes() {
        let mut m = Mat6::zeros();
        for (k, v) in [5.0, 2.0, 1.0, 0.3, 0.4, 0.5].iter().enumerate() {
            m[(k, k)] = *v;
        }
        let r = rotate_elasticity(
            &SymTensor4::from_matrix(&m),
            RotationAngle::new(PI / 2.0).unwrap(),
        );
        assert!((r.get(0, 0) - 2.0).abs() < 1e-14);
        assert!((r.get(1, 1) - 5.0).abs() < 1e-14);
        assert!((r.get(2, 2) - 1.0).abs() < 1e-14);
        assert!((r.get(3, 3) - 0.4).abs() < 1e-14);
        assert!((r.get(4, 4) - 0.3).abs() < 1e-14);
    }

    #[test]
    fn isotropic_is_rotation_invariant() {
        let a = SymTensor4::isotropic(3.9, 0.34);
        for phi in [0.1, 0.7, 1.3, 2.9] {
            let r = rotate_elasticity(&a, RotationAngle::new(phi).unwrap());
            assert!(max_diff6(&a, &r) < 1e-13);
        }
    }

    #[test]
    fn inverse_rotation_recovers_tensor() {
        let a = orthotropic();
        for phi in [0.3, 1.1, 2.5] {
            let r = rotate_elasticity(&a, RotationAngle::new(phi).unwrap());
            let back = rotate_elasticity_by(&r, 2.0 * PI - phi);
            assert!(max_diff6(&a, &back) < 1e-13);
        }
    }

    #[test]
    fn compliance_rotation_matches_inverse_of_rotated_stiffness() {
        let a = orthotropic();
        let s = spd_inverse(&a).unwrap();
        for phi in [0.2, 0.9, 1.9] {
            let lhs = rotate_compliance(&s, phi);
            let rhs = spd_inverse(&rotate_elasticity_by(&a, phi)).unwrap();
            assert!(max_diff6(&lhs, &rhs) < 1e-12);
        }
    }

    #[test]
    fn s3_rotation_cases() {
        let id = SymMatrix3::identity();
        let r = rotate_s3(&id, RotationAngle::new(0.77).unwrap());
        assert!(r.add(&id.scale(-1.0)).max_abs() < 1e-15);
        let d = SymMatrix3::diag(1.0, 2.0, 3.0);
        let r = rotate_s3(&d, RotationAngle::new(PI / 2.0).unwrap());
        assert!(
            r.add(&SymMatrix3::diag(2.0, 1.0, 3.0).scale(-1.0))
                .max_abs()
                < 1e-15
        );
    }

    #[test]
    fn frobenius_hand_values() {
        let i3 = SymMatrix3::identity();
        assert_eq!(frobenius(&i3, &i3), 3.0);
        let i6 = SymTensor4::identity();
        assert_eq!(frobenius(&i6, &i6), 6.0);
        let x = SymMatrix3::diag(1.0, 2.0, 3.0);
        let y = SymMatrix3::diag(4.0, 5.0, 6.0);
        assert_eq!(frobenius(&x, &y), 32.0);
        let a = orthotropic();
        let b = SymTensor4::isotropic(1.0, 0.25);
        assert!((frobenius(&a, &b) - a.to_matrix().frobenius(&b.to_matrix())).abs() < 1e-14);
    }

    #[test]
    fn inverse_hand_values() {
        let inv = spd_inverse3(&SymMatrix3::identity()).unwrap();
        assert!(inv.add(&SymMatrix3::identity().scale(-1.0)).max_abs() < 1e-11);
        let inv = spd_inverse3(&SymMatrix3::diag(2.0, 4.0, 5.0)).unwrap();
        assert!((inv.get(0, 0) - 0.5).abs() < 1e-11);
        assert!((inv.get(1, 1) - 0.25).abs() < 1e-11);
        assert!((inv.get(2, 2) - 0.2).abs() < 1e-11);
        let inv = spd_inverse(&SymTensor4::identity()).unwrap();
        assert!(inv.sub(&SymTensor4::identity()).max_abs() < 1e-15);
    }

    #[test]
    fn inverse_rejects_indefinite_and_zero() {
        assert!(matches!(
            spd_inverse3(&SymMatrix3::zeros()),
            Err(Error::NotPositiveDefinite { .. })
        ));
        assert!(spd_inverse3(&SymMatrix3::diag(1.0, -1.0, 1.0)).is_err());
        assert!(spd_inverse(&SymTensor4::identity().scale(-1.0)).is_err());
    }

    fn random_spd6() -> impl Strategy<Value = SymTensor4> {
        prop::collection::vec(-1.0f64..1.0, 36).prop_map(|v| {
            let g = Mat6::from_column_slice(&v);
            SymTensor4::from_matrix(&(g.transpose() * g + Mat6::identity()))
        })
    }

    fn random_sym3() -> impl Strategy<Value = SymMatrix3> {
        prop::array::uniform6(-2.0f64..2.0).prop_map(SymMatrix3::from_upper)
    }

    proptest! {
        #[test]
        fn spd_inverse_round_trip(a in random_spd6()) {
            let inv = spd_inverse(&a).unwrap();
            let res = a.to_matrix() * inv.to_matrix() - Mat6::identity();
            prop_assert!(res.norm() <= 1e-10);
        }

        #[test]
        fn rotation_preserves_kelvin_eigenvalues(a in random_spd6(), phi in 0.0..PI) {
            let r = rotate_elasticity(&a, RotationAngle::new(phi).unwrap());
            let e0 = a.kelvin_eigenvalues();
            let e1 = r.kelvin_eigenvalues();
            for (x, y) in e0.iter().zip(e1.iter()) {
                prop_assert!((x - y).abs() <= 1e-12 * e0[5].abs().max(1.0));
            }
        }

        #[test]
        fn s3_rotation_preserves_eigenvalues(m in random_sym3(), phi in 0.0..PI) {
            let r = rotate_s3(&m, RotationAngle::new(phi).unwrap());
            let e0 = m.eigenvalues();
            let e1 = r.eigenvalues();
            for (x, y) in e0.iter().zip(e1.iter()) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + e0[2].abs()));
            }
            prop_assert!((m.trace() - r.trace()).abs() <= 1e-12);
        }

        #[test]
        fn frobenius_is_symmetric_and_bilinear(a in random_spd6(), b in random_spd6(), s in -3.0f64..3.0) {
            prop_assert!((frobenius(&a, &b) - frobenius(&b, &a)).abs() < 1e-12);
            let lhs = frobenius(&a.scale(s).add(&b), &a);
            let rhs = s * frobenius(&a, &a) + frobenius(&b, &a);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }
    }
}
