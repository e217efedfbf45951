//! Periodic 27-point block stencils on `n³` node grids and a geometric
//! multigrid preconditioner built from Galerkin coarse operators.
//!
//! Node `(i, j, k)` has index `i + n(j + nk)`. Neighbour slot
//! `s = (dx+1) + 3(dy+1) + 9(dz+1)` addresses node `(i+dx, j+dy, k+dz)`
//! modulo `n`; slot 13 is the diagonal. Blocks are `B×B`, row-major.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::Result;
use crate::linalg::{pcg, CgReport};

pub const DIAG_SLOT: usize = 13;

#[inline]
pub fn slot(dx: i64, dy: i64, dz: i64) -> usize {
    ((dx + 1) + 3 * (dy + 1) + 9 * (dz + 1)) as usize
}

#[derive(Clone, Debug)]
pub struct BlockStencil<const B: usize> {
    n: usize,
    blocks: Vec<f64>,
}

impl<const B: usize> BlockStencil<B> {
    const BB: usize = B * B;
    const ROW: usize = 27 * B * B;

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            blocks: vec![0.0; n * n * n * 27 * B * B],
        }
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn nodes(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn dofs(&self) -> usize {
        self.nodes() * B
    }

    #[inline]
    pub fn block(&self, node: usize, s: usize) -> &[f64] {
        let o = node * Self::ROW + s * Self::BB;
        &self.blocks[o..o + Self::BB]
    }

    #[inline]
    pub fn block_mut(&mut self, node: usize, s: usize) -> &mut [f64] {
        let o = node * Self::ROW + s * Self::BB;
        &mut self.blocks[o..o + Self::BB]
    }

    /// Indices of the 27 neighbours of every node in slot order.
    #[inline]
    fn neighbours(&self, node: usize) -> [usize; 27] {
        let n = self.n;
        let (i, j, k) = (node % n, (node / n) % n, node / (n * n));
        let xs = [(i + n - 1) % n, i, (i + 1) % n];
        let ys = [(j + n - 1) % n, j, (j + 1) % n];
        let zs = [(k + n - 1) % n, k, (k + 1) % n];
        let mut out = [0usize; 27];
        let mut s = 0;
        for z in zs {
            for y in ys {
                for x in xs {
                    out[s] = x + n * (y + n * z);
                    s += 1;
                }
            }
        }
        out
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for node in 0..self.nodes() {
            let nb = self.neighbours(node);
            let row = &self.blocks[node * Self::ROW..(node + 1) * Self::ROW];
            let mut acc = [0.0; B];
            for (s, &w) in nb.iter().enumerate() {
                let blk = &row[s * Self::BB..(s + 1) * Self::BB];
                let xw = &x[w * B..(w + 1) * B];
                for r in 0..B {
                    let mut t = 0.0;
                    for c in 0..B {
                        t += blk[r * B + c] * xw[c];
                    }
                    acc[r] += t;
                }
            }
            y[node * B..(node + 1) * B].copy_from_slice(&acc);
        }
    }

    /// Marks nodes whose diagonal block vanishes as inactive and gives them
    /// an identity diagonal, decoupling them from the rest of the system.
    pub fn pin_inactive(&mut self) -> Vec<bool> {
        let mut active = vec![true; self.nodes()];
        for (node, act) in active.iter_mut().enumerate() {
            let d = self.block(node, DIAG_SLOT);
            if d.iter().all(|&v| v == 0.0) {
                *act = false;
                let d = self.block_mut(node, DIAG_SLOT);
                for r in 0..B {
                    d[r * B + r] = 1.0;
                }
            }
        }
        active
    }

    fn diagonal_inverses(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.nodes() * Self::BB];
        for node in 0..self.nodes() {
            let d = self.block(node, DIAG_SLOT);
            let m = DMatrix::from_row_slice(B, B, d);
            let inv = m.try_inverse().unwrap_or_else(|| DMatrix::identity(B, B));
            for r in 0..B {
                for c in 0..B {
                    out[node * Self::BB + r * B + c] = inv[(r, c)];
                }
            }
        }
        out
    }

    /// Dense copy, used for the coarsest multigrid level and in tests.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let nd = self.dofs();
        let mut m = DMatrix::zeros(nd, nd);
        for node in 0..self.nodes() {
            let nb = self.neighbours(node);
            for (s, &w) in nb.iter().enumerate() {
                let blk = self.block(node, s);
                for r in 0..B {
                    for c in 0..B {
                        m[(node * B + r, w * B + c)] += blk[r * B + c];
                    }
                }
            }
        }
        m
    }
}

/// Trilinear prolongation weights from coarse `n/2` to fine `n` along one
/// axis: returns up to two `(coarse index, weight)` pairs.
#[inline]
fn prolong_1d(f: usize, nc: usize) -> [(usize, f64); 2] {
    if f.is_multiple_of(2) {
        [(f / 2, 1.0), (f / 2, 0.0)]
    } else {
        [((f - 1) / 2, 0.5), (f.div_ceil(2) % nc, 0.5)]
    }
}

#[derive(Clone, Debug)]
struct Level<const B: usize> {
    op: BlockStencil<B>,
    active: Vec<bool>,
    dinv: Vec<f64>,
}

/// V-cycle preconditioner with symmetric block Gauss–Seidel smoothing.
#[derive(Clone, Debug)]
pub struct Multigrid<const B: usize> {
    levels: Vec<Level<B>>,
    coarse_pinv: DMatrix<f64>,
    smoothing_steps: usize,
}

impl<const B: usize> Multigrid<B> {
    /// Builds the hierarchy from a fine operator whose inactive nodes are
    /// already pinned.
    pub fn new(fine: BlockStencil<B>, active: Vec<bool>) -> Self {
        let mut levels = Vec::new();
        let mut op = fine;
        let mut act = active;
        loop {
            let n = op.n;
            let dinv = op.diagonal_inverses();
            let coarsen = n.is_multiple_of(2) && n > 4;
            if !coarsen {
                levels.push(Level {
                    op,
                    active: act,
                    dinv,
                });
                break;
            }
            let (cop, cact) = galerkin_coarse(&op, &act);
            levels.push(Level {
                op,
                active: act,
                dinv,
            });
            op = cop;
            act = cact;
        }
        let last = levels.last().expect("at least one level");
        let dense = last.op.to_dense();
        let coarse_pinv = pseudo_inverse(&dense);
        Self {
            levels,
            coarse_pinv,
            smoothing_steps: 1,
        }
    }

    pub fn fine(&self) -> &BlockStencil<B> {
        &self.levels[0].op
    }

    pub fn fine_active(&self) -> &[bool] {
        &self.levels[0].active
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn precondition(&self, r: &[f64], z: &mut [f64]) {
        self.vcycle(0, r, z);
    }

    fn vcycle(&self, l: usize, r: &[f64], z: &mut [f64]) {
        let lev = &self.levels[l];
        if l + 1 == self.levels.len() {
            let rv = nalgebra::DVector::from_column_slice(r);
            let zv = &self.coarse_pinv * rv;
            z.copy_from_slice(zv.as_slice());
            return;
        }
        z.iter_mut().for_each(|v| *v = 0.0);
        for _ in 0..self.smoothing_steps {
            gauss_seidel(lev, r, z, true);
        }
        let mut res = vec![0.0; r.len()];
        lev.op.apply(z, &mut res);
        for (a, b) in res.iter_mut().zip(r) {
            *a = b - *a;
        }
        let coarse = &self.levels[l + 1];
        let mut rc = vec![0.0; coarse.op.dofs()];
        restrict::<B>(lev.op.n, &lev.active, &res, &mut rc);
        for (node, &a) in coarse.active.iter().enumerate() {
            if !a {
                rc[node * B..(node + 1) * B]
                    .iter_mut()
                    .for_each(|v| *v = 0.0);
            }
        }
        let mut zc = vec![0.0; rc.len()];
        self.vcycle(l + 1, &rc, &mut zc);
        prolong_add::<B>(lev.op.n, &lev.active, &zc, z);
        for _ in 0..self.smoothing_steps {
            gauss_seidel(lev, r, z, false);
        }
    }

    /// PCG on the fine operator with this V-cycle as preconditioner.
    pub fn solve(
        &self,
        b: &[f64],
        x: &mut [f64],
        rel_tol: f64,
        max_iter: usize,
    ) -> Result<CgReport> {
        let op = self.fine();
        pcg(
            |v, out| op.apply(v, out),
            |r, z| self.precondition(r, z),
            b,
            x,
            rel_tol,
            max_iter,
        )
    }
}

fn gauss_seidel<const B: usize>(lev: &Level<B>, r: &[f64], z: &mut [f64], forward: bool) {
    let nn = lev.op.nodes();
    let bb = B * B;
    let mut visit = |node: usize| {
        let nb = lev.op.neighbours(node);
        let mut acc = [0.0; B];
        acc.copy_from_slice(&r[node * B..(node + 1) * B]);
        for (s, &w) in nb.iter().enumerate() {
            if s == DIAG_SLOT {
                continue;
            }
            let blk = lev.op.block(node, s);
            for rr in 0..B {
                let mut t = 0.0;
                for c in 0..B {
                    t += blk[rr * B + c] * z[w * B + c];
                }
                acc[rr] -= t;
            }
        }
        let d = &lev.dinv[node * bb..(node + 1) * bb];
        for rr in 0..B {
            let mut t = 0.0;
            for c in 0..B {
                t += d[rr * B + c] * acc[c];
            }
            z[node * B + rr] = t;
        }
    };
    if forward {
        (0..nn).for_each(&mut visit);
    } else {
        (0..nn).rev().for_each(&mut visit);
    }
}

/// Visits the (up to 8) coarse nodes interpolating fine node `f`.
#[inline]
fn for_each_parent(nf: usize, f: usize, mut visit: impl FnMut(usize, f64)) {
    let nc = nf / 2;
    let (i, j, k) = (f % nf, (f / nf) % nf, f / (nf * nf));
    let px = prolong_1d(i, nc);
    let py = prolong_1d(j, nc);
    let pz = prolong_1d(k, nc);
    for &(cz, wz) in &pz {
        if wz == 0.0 {
            continue;
        }
        for &(cy, wy) in &py {
            if wy == 0.0 {
                continue;
            }
            for &(cx, wx) in &px {
                if wx == 0.0 {
                    continue;
                }
                visit(cx + nc * (cy + nc * cz), wx * wy * wz);
            }
        }
    }
}

fn restrict<const B: usize>(nf: usize, active: &[bool], fine: &[f64], coarse: &mut [f64]) {
    coarse.iter_mut().for_each(|v| *v = 0.0);
    for f in 0..nf * nf * nf {
        if !active[f] {
            continue;
        }
        for_each_parent(nf, f, |c, w| {
            for d in 0..B {
                coarse[c * B + d] += w * fine[f * B + d];
            }
        });
    }
}

fn prolong_add<const B: usize>(nf: usize, active: &[bool], coarse: &[f64], fine: &mut [f64]) {
    for f in 0..nf * nf * nf {
        if !active[f] {
            continue;
        }
        for_each_parent(nf, f, |c, w| {
            for d in 0..B {
                fine[f * B + d] += w * coarse[c * B + d];
            }
        });
    }
}

/// `Pᵀ A P` with `P` the masked trilinear prolongation; returns the coarse
/// operator (inactive nodes pinned) and its activity mask.
fn galerkin_coarse<const B: usize>(
    op: &BlockStencil<B>,
    active: &[bool],
) -> (BlockStencil<B>, Vec<bool>) {
    let nf = op.n;
    let nc = nf / 2;
    let mut coarse = BlockStencil::<B>::zeros(nc);
    let mut parents: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nf * nf * nf];
    for (f, p) in parents.iter_mut().enumerate() {
        if active[f] {
            for_each_parent(nf, f, |c, w| p.push((c, w)));
        }
    }
    let wrap = |d: i64| -> i64 {
        let n = nc as i64;
        let d = d.rem_euclid(n);
        if d > n / 2 {
            d - n
        } else if n == 2 && d == 1 {
            1
        } else {
            d
        }
    };
    for f in 0..nf * nf * nf {
        if !active[f] {
            continue;
        }
        let nb = op.neighbours(f);
        for (s, &w) in nb.iter().enumerate() {
            if !active[w] {
                continue;
            }
            let blk: Vec<f64> = op.block(f, s).to_vec();
            if blk.iter().all(|&v| v == 0.0) {
                continue;
            }
            for &(c1, w1) in &parents[f] {
                let (x1, y1, z1) = (
                    (c1 % nc) as i64,
                    ((c1 / nc) % nc) as i64,
                    (c1 / (nc * nc)) as i64,
                );
                for &(c2, w2) in &parents[w] {
                    let (x2, y2, z2) = (
                        (c2 % nc) as i64,
                        ((c2 / nc) % nc) as i64,
                        (c2 / (nc * nc)) as i64,
                    );
                    let s2 = slot(wrap(x2 - x1), wrap(y2 - y1), wrap(z2 - z1));
                    let ww = w1 * w2;
                    let target = coarse.block_mut(c1, s2);
                    for (t, b) in target.iter_mut().zip(&blk) {
                        *t += ww * b;
                    }
                }
            }
        }
    }
    let cact = coarse.pin_inactive();
    (coarse, cact)
}

/// Symmetric pseudo-inverse discarding eigenvalues below `1e-10·max`.
fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let cut = 1e-10 * lmax;
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l.abs() > cut {
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / l;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Periodic scalar Laplacian plus a positive shift on an `n³` grid.
    fn shifted_laplacian(n: usize, shift: f64) -> BlockStencil<1> {
        let mut op = BlockStencil::<1>::zeros(n);
        for node in 0..op.nodes() {
            op.block_mut(node, DIAG_SLOT)[0] = 6.0 + shift;
            for (dx, dy, dz) in [
                (1, 0, 0),
                (-1, 0, 0),
                (0, 1, 0),
                (0, -1, 0),
                (0, 0, 1),
                (0, 0, -1),
            ] {
                op.block_mut(node, slot(dx, dy, dz))[0] = -1.0;
            }
        }
        op
    }

    #[test]
    fn apply_matches_dense() {
        let op = shifted_laplacian(4, 0.5);
        let dense = op.to_dense();
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut y = vec![0.0; 64];
        op.apply(&x, &mut y);
        let yd = &dense * nalgebra::DVector::from_vec(x);
        for i in 0..64 {
            assert!((y[i] - yd[i]).abs() < 1e-12);
        }
        assert!((&dense - dense.transpose()).abs().max() < 1e-15);
    }

    #[test]
    fn galerkin_operator_equals_dense_triple_product() {
        let op = shifted_laplacian(8, 0.1);
        let active = vec![true; 512];
        let (coarse, _) = galerkin_coarse(&op, &active);
        let mut p = DMatrix::<f64>::zeros(512, 64);
        for f in 0..512 {
            for_each_parent(8, f, |c, w| p[(f, c)] += w);
        }
        let expected = p.transpose() * op.to_dense() * &p;
        let got = coarse.to_dense();
        assert!((expected - got).abs().max() < 1e-12);
    }

    #[test]
    fn multigrid_pcg_solves_singular_periodic_laplacian() {
        let n = 16;
        let op = shifted_laplacian(n, 0.0);
        let active = vec![true; n * n * n];
        let mg = Multigrid::new(op, active);
        assert_eq!(mg.num_levels(), 3);
        let mut b: Vec<f64> = (0..n * n * n)
            .map(|i| ((i * 7919) % 101) as f64 - 50.0)
            .collect();
        let mean = b.iter().sum::<f64>() / b.len() as f64;
        b.iter_mut().for_each(|v| *v -= mean);
        let mut x = vec![0.0; b.len()];
        let rep = mg.solve(&b, &mut x, 1e-10, 200).unwrap();
        assert!(rep.iterations < 40, "{} iterations", rep.iterations);
    }
}
