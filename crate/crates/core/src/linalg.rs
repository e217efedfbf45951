//! Linear solvers: a banded Cholesky factorization for the macroscopic
//! systems and a preconditioned conjugate gradient for the cell problems.

use crate::error::{Error, Result};

/// Symmetric positive definite matrix in lower band storage.
///
/// Row `i` keeps entries `(i, i - bw ..= i)` at `data[i * (bw + 1) + (j + bw - i)]`.
#[derive(Clone, Debug)]
pub struct BandedMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Adds `v` at `(i, j)`; only the lower triangle is stored, so callers
    /// add each symmetric pair once via either ordering.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.bw);
            let row = &self.data[i * (self.bw + 1)..(i + 1) * (self.bw + 1)];
            let off = self.bw + j0 - i;
            let mut acc = row[self.bw] * x[i];
            for j in j0..i {
                let a = row[off + j - j0];
                acc += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += acc;
        }
    }

    /// In-place Cholesky factorization `A = L Lᵀ`.
    pub fn factor(mut self) -> Result<BandedCholesky> {
        let n = self.n;
        let bw = self.bw;
        let w = bw + 1;
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(bw));
                let mut sum = self.data[i * w + (j + bw - i)];
                for k in k0..j {
                    sum -= self.data[i * w + (k + bw - i)] * self.data[j * w + (k + bw - j)];
                }
                if j == i {
                    if !(sum > 0.0) {
                        return Err(Error::SingularSystem(format!(
                            "non-positive pivot {sum:.3e} at row {i}"
                        )));
                    }
                    self.data[i * w + bw] = sum.sqrt();
                } else {
                    self.data[i * w + (j + bw - i)] = sum / self.data[j * w + bw];
                }
            }
        }
        Ok(BandedCholesky {
            n,
            bw,
            l: self.data,
        })
    }
}

/// Cholesky factor of a [`BandedMatrix`].
#[derive(Clone, Debug)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let w = self.bw + 1;
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.bw);
            let mut s = b[i];
            for j in j0..i {
                s -= self.l[i * w + (j + self.bw - i)] * b[j];
            }
            b[i] = s / self.l[i * w + self.bw];
        }
        for i in (0..self.n).rev() {
            let x = b[i] / self.l[i * w + self.bw];
            b[i] = x;
            let j0 = i.saturating_sub(self.bw);
            for j in j0..i {
                b[j] -= self.l[i * w + (j + self.bw - i)] * x;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Outcome of an iterative solve.
#[derive(Clone, Copy, Debug)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Preconditioned CG for a symmetric positive (semi)definite operator.
///
/// `apply(x, y)` must write `y = A x`; `precond(r, z)` writes `z = M⁻¹ r`.
/// For semidefinite operators the right-hand side must be consistent; the
/// iterate then stays in the range of `A` when started from zero.
pub fn pcg<A, P>(
    apply: A,
    precond: P,
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<CgReport>
where
    A: Fn(&[f64], &mut [f64]),
    P: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgReport {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = vec![0.0; n];
    let mut q = vec![0.0; n];
    apply(x, &mut q);
    for i in 0..n {
        r[i] = b[i] - q[i];
    }
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut res = norm(&r) / bnorm;
    let mut it = 0;
    while res > rel_tol && it < max_iter {
        apply(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            break;
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        it += 1;
        res = norm(&r) / bnorm;
    }
    if res > rel_tol {
        // recompute the true residual before giving up
        apply(x, &mut q);
        let true_res = b
            .iter()
            .zip(&q)
            .map(|(bi, qi)| (bi - qi) * (bi - qi))
            .sum::<f64>()
            .sqrt()
            / bnorm;
        if true_res > rel_tol {
            return Err(Error::NotConverged {
                iterations: it,
                residual: true_res,
            });
        }
        res = true_res;
    }
    Ok(CgReport {
        iterations: it,
        relative_residual: res,
    })
}

/// Preconditioned MINRES for a symmetric (possibly indefinite) operator
/// with a symmetric positive definite preconditioner.
///
/// Stops when the preconditioned residual estimate drops below `rel_tol`
/// times its initial value, then checks the true residual against
/// `rel_tol · ‖b‖`.
pub fn minres<A, P>(
    apply: A,
    precond: P,
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<CgReport>
where
    A: Fn(&[f64], &mut [f64]),
    P: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgReport {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut v_prev = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut az = vec![0.0; n];
    apply(x, &mut az);
    for i in 0..n {
        v[i] = b[i] - az[i];
    }
    let mut z = vec![0.0; n];
    precond(&v, &mut z);
    let mut gamma = dot(&z, &v).max(0.0).sqrt();
    let gamma0 = gamma;
    let mut gamma_prev = 1.0;
    let mut eta = gamma;
    let (mut c, mut c_prev, mut s, mut s_prev) = (1.0, 1.0, 0.0, 0.0);
    let mut w = vec![0.0; n];
    let mut w_prev = vec![0.0; n];
    let mut z_next = vec![0.0; n];
    let mut it = 0;
    while it < max_iter && gamma0 > 0.0 && eta.abs() > rel_tol * gamma0 && gamma > 0.0 {
        for zi in z.iter_mut() {
            *zi /= gamma;
        }
        apply(&z, &mut az);
        let delta = dot(&az, &z);
        for i in 0..n {
            let vn = az[i] - (delta / gamma) * v[i] - (gamma / gamma_prev) * v_prev[i];
            v_prev[i] = v[i];
            v[i] = vn;
        }
        precond(&v, &mut z_next);
        let gamma_next = dot(&z_next, &v).max(0.0).sqrt();
        let a0 = c * delta - c_prev * s * gamma;
        let a1 = (a0 * a0 + gamma_next * gamma_next).sqrt();
        let a2 = s * delta + c_prev * c * gamma;
        let a3 = s_prev * gamma;
        if a1 == 0.0 {
            break;
        }
        let c_next = a0 / a1;
        let s_next = gamma_next / a1;
        for i in 0..n {
            let wn = (z[i] - a3 * w_prev[i] - a2 * w[i]) / a1;
            w_prev[i] = w[i];
            w[i] = wn;
            x[i] += c_next * eta * wn;
        }
        eta *= -s_next;
        c_prev = c;
        c = c_next;
        s_prev = s;
        s = s_next;
        gamma_prev = gamma;
        gamma = gamma_next;
        std::mem::swap(&mut z, &mut z_next);
        it += 1;
    }
    apply(x, &mut az);
    let res = b
        .iter()
        .zip(&az)
        .map(|(bi, ai)| (bi - ai) * (bi - ai))
        .sum::<f64>()
        .sqrt()
        / bnorm;
    if res > rel_tol * 10.0 && res > 1e-14 {
        return Err(Error::NotConverged {
            iterations: it,
            residual: res,
        });
    }
    Ok(CgReport {
        iterations: it,
        relative_residual: res,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_banded(n: usize, bw: usize, seed: u64) -> (BandedMatrix, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(bw)..i {
                let v: f64 = rng.random_range(-1.0..1.0);
                dense[(i, j)] = v;
                dense[(j, i)] = v;
            }
            dense[(i, i)] = 2.0 * bw as f64 + 1.0;
        }
        let mut band = BandedMatrix::zeros(n, bw);
        for i in 0..n {
            for j in i.saturating_sub(bw)..=i {
                band.add(i, j, dense[(i, j)]);
            }
        }
        (band, dense)
    }

    #[test]
    fn banded_cholesky_matches_dense_solve() {
        let (band, dense) = random_banded(40, 5, 7);
        let b: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let x = band.factor().unwrap().solve(&b);
        let xd = dense.lu().solve(&DVector::from_vec(b)).unwrap();
        for i in 0..40 {
            assert!((x[i] - xd[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn banded_matvec_matches_dense() {
        let (band, dense) = random_banded(17, 4, 3);
        let x: Vec<f64> = (0..17).map(|i| 1.0 + i as f64).collect();
        let mut y = vec![0.0; 17];
        band.matvec(&x, &mut y);
        let yd = &dense * DVector::from_vec(x);
        for i in 0..17 {
            assert!((y[i] - yd[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn factor_rejects_indefinite() {
        let mut m = BandedMatrix::zeros(2, 1);
        m.add(0, 0, 1.0);
        m.add(1, 0, 2.0);
        m.add(1, 1, 1.0);
        assert!(m.factor().is_err());
    }

    #[test]
    fn pcg_solves_spd_system() {
        let (band, dense) = random_banded(30, 3, 11);
        let b: Vec<f64> = (0..30).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut x = vec![0.0; 30];
        let diag: Vec<f64> = (0..30).map(|i| band.get(i, i)).collect();
        let rep = pcg(
            |v, out| band.matvec(v, out),
            |r, z| {
                z.iter_mut()
                    .zip(r)
                    .zip(&diag)
                    .for_each(|((z, r), d)| *z = r / d)
            },
            &b,
            &mut x,
            1e-12,
            500,
        )
        .unwrap();
        assert!(rep.relative_residual <= 1e-12);
        let xd = dense.lu().solve(&DVector::from_vec(b)).unwrap();
        for i in 0..30 {
            assert!((x[i] - xd[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn minres_solves_symmetric_indefinite_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 25;
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = rng.random_range(-1.0..1.0);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
            m[(i, i)] += if i % 2 == 0 { 6.0 } else { -6.0 };
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let mut x = vec![0.0; n];
        let diag: Vec<f64> = (0..n).map(|i| m[(i, i)].abs()).collect();
        let rep = minres(
            |v, out| {
                let y = &m * DVector::from_column_slice(v);
                out.copy_from_slice(y.as_slice());
            },
            |r, z| {
                z.iter_mut()
                    .zip(r)
                    .zip(&diag)
                    .for_each(|((z, r), d)| *z = r / d)
            },
            &b,
            &mut x,
            1e-12,
            500,
        )
        .unwrap();
        assert!(rep.relative_residual < 1e-10);
        let xd = m.lu().solve(&DVector::from_vec(b)).unwrap();
        for i in 0..n {
            assert!((x[i] - xd[i]).abs() < 1e-8);
        }
    }
}
