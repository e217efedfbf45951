//! Trilinear hexahedral element on an axis-aligned box.
//!
//! Local node `a = ax + 2·ay + 4·az` sits at `(ax·hx, ay·hy, az·hz)`; the
//! displacement degree of freedom `3a + c` carries component `c`.

use crate::tensors::Mat6;

pub const NODES: usize = 8;
pub const DOFS: usize = 24;

/// Gauss abscissae for the 2-point rule on `[0, 1]`.
pub const GAUSS_1D: [f64; 2] = [
    0.5 - 0.5 / 1.732_050_807_568_877_2,
    0.5 + 0.5 / 1.732_050_807_568_877_2,
];

#[inline]
pub fn node_offset(a: usize) -> [usize; 3] {
    [a & 1, (a >> 1) & 1, (a >> 2) & 1]
}

/// The eight 2×2×2 Gauss points in reference coordinates; each carries
/// weight `volume / 8`.
pub fn gauss_points() -> [[f64; 3]; 8] {
    let mut pts = [[0.0; 3]; 8];
    for (q, p) in pts.iter_mut().enumerate() {
        let o = node_offset(q);
        *p = [GAUSS_1D[o[0]], GAUSS_1D[o[1]], GAUSS_1D[o[2]]];
    }
    pts
}

#[inline]
fn lin(s: usize, t: f64) -> f64 {
    if s == 1 {
        t
    } else {
        1.0 - t
    }
}

#[inline]
fn dlin(s: usize) -> f64 {
    if s == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Shape function values at reference point `xi ∈ [0,1]³`.
pub fn shape(xi: &[f64; 3]) -> [f64; 8] {
    let mut n = [0.0; 8];
    for (a, v) in n.iter_mut().enumerate() {
        let o = node_offset(a);
        *v = lin(o[0], xi[0]) * lin(o[1], xi[1]) * lin(o[2], xi[2]);
    }
    n
}

/// Physical shape-function gradients at reference point `xi`.
pub fn shape_gradients(xi: &[f64; 3], h: &[f64; 3]) -> [[f64; 3]; 8] {
    let mut g = [[0.0; 3]; 8];
    for (a, ga) in g.iter_mut().enumerate() {
        let o = node_offset(a);
        ga[0] = dlin(o[0]) * lin(o[1], xi[1]) * lin(o[2], xi[2]) / h[0];
        ga[1] = lin(o[0], xi[0]) * dlin(o[1]) * lin(o[2], xi[2]) / h[1];
        ga[2] = lin(o[0], xi[0]) * lin(o[1], xi[1]) * dlin(o[2]) / h[2];
    }
    g
}

/// Engineering strain-displacement matrix (6×24), Voigt order
/// `(11, 22, 33, 23, 13, 12)`.
pub fn strain_matrix(grads: &[[f64; 3]; 8]) -> [[f64; 24]; 6] {
    let mut b = [[0.0; 24]; 6];
    for (a, g) in grads.iter().enumerate() {
        let c = 3 * a;
        b[0][c] = g[0];
        b[1][c + 1] = g[1];
        b[2][c + 2] = g[2];
        b[3][c + 1] = g[2];
        b[3][c + 2] = g[1];
        b[4][c] = g[2];
        b[4][c + 2] = g[0];
        b[5][c] = g[1];
        b[5][c + 1] = g[0];
    }
    b
}

/// Element stiffness `∫ Bᵀ D B` (24×24, row-major) for Voigt stiffness `d`.
pub fn stiffness(d: &Mat6, h: &[f64; 3]) -> Vec<f64> {
    let w = h[0] * h[1] * h[2] / 8.0;
    let mut ke = vec![0.0; DOFS * DOFS];
    for xi in gauss_points() {
        let b = strain_matrix(&shape_gradients(&xi, h));
        let mut db = [[0.0; 24]; 6];
        for i in 0..6 {
            for k in 0..24 {
                let mut s = 0.0;
                for j in 0..6 {
                    s += d[(i, j)] * b[j][k];
                }
                db[i][k] = s;
            }
        }
        for r in 0..24 {
            for c in 0..24 {
                let mut s = 0.0;
                for i in 0..6 {
                    s += b[i][r] * db[i][c];
                }
                ke[r * DOFS + c] += w * s;
            }
        }
    }
    ke
}

/// Element diffusion matrix `∫ ∇Nᵀ K ∇N` (8×8, row-major).
pub fn diffusion(k: &nalgebra::Matrix3<f64>, h: &[f64; 3]) -> [f64; 64] {
    let w = h[0] * h[1] * h[2] / 8.0;
    let mut ce = [0.0; 64];
    for xi in gauss_points() {
        let g = shape_gradients(&xi, h);
        for a in 0..8 {
            let kg = [
                k[(0, 0)] * g[a][0] + k[(0, 1)] * g[a][1] + k[(0, 2)] * g[a][2],
                k[(1, 0)] * g[a][0] + k[(1, 1)] * g[a][1] + k[(1, 2)] * g[a][2],
                k[(2, 0)] * g[a][0] + k[(2, 1)] * g[a][1] + k[(2, 2)] * g[a][2],
            ];
            for b in 0..8 {
                ce[b * 8 + a] += w * (kg[0] * g[b][0] + kg[1] * g[b][1] + kg[2] * g[b][2]);
            }
        }
    }
    ce
}

/// Element coupling matrix (24×8, row-major): entry `(i, b)` is
/// `∫ N_b (β : e(φ_i))` where `beta` is the Voigt vector of a symmetric
/// tensor in tensor components.
pub fn coupling(beta: &[f64; 6], h: &[f64; 3]) -> Vec<f64> {
    let w = h[0] * h[1] * h[2] / 8.0;
    let mut ge = vec![0.0; DOFS * NODES];
    for xi in gauss_points() {
        let n = shape(&xi);
        let b = strain_matrix(&shape_gradients(&xi, h));
        for i in 0..24 {
            let mut s = 0.0;
            for k in 0..6 {
                s += beta[k] * b[k][i];
            }
            for (bn, nv) in n.iter().enumerate() {
                ge[i * NODES + bn] += w * s * nv;
            }
        }
    }
    ge
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensors::SymTensor4;

    #[test]
    fn partition_of_unity_and_gradient_sum() {
        let xi = [0.3, 0.7, 0.2];
        let n = shape(&xi);
        assert!((n.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let g = shape_gradients(&xi, &[1.0, 2.0, 0.5]);
        for c in 0..3 {
            assert!(g.iter().map(|ga| ga[c]).sum::<f64>().abs() < 1e-14);
        }
    }

    #[test]
    fn stiffness_annihilates_rigid_translation_and_is_symmetric() {
        let d = SymTensor4::isotropic(3.9, 0.34).to_matrix();
        let ke = stiffness(&d, &[0.5, 0.5, 0.5]);
        for r in 0..24 {
            for c in 0..3 {
                let s: f64 = (0..8).map(|a| ke[r * 24 + 3 * a + c]).sum();
                assert!(s.abs() < 1e-12);
            }
            for c in 0..24 {
                assert!((ke[r * 24 + c] - ke[c * 24 + r]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_strain_energy_is_exact() {
        // u = E x with E the engineering unit strain in slot 0 gives energy D00 · vol
        let d = SymTensor4::isotropic(2.0, 0.3).to_matrix();
        let h = [1.0, 2.0, 3.0];
        let ke = stiffness(&d, &h);
        let mut u = [0.0; 24];
        for a in 0..8 {
            let o = node_offset(a);
            u[3 * a] = o[0] as f64 * h[0];
        }
        let mut e = 0.0;
        for r in 0..24 {
            for c in 0..24 {
                e += u[r] * ke[r * 24 + c] * u[c];
            }
        }
        assert!((e - d[(0, 0)] * 6.0).abs() < 1e-12);
    }
}
