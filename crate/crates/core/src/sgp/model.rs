//! Separable first-order model of the merit around the current design and
//! the factorized per-element candidate scan.
//!
//! Per element the physical part is reciprocal in each tensor,
//! `−⟨X^k G X^k, X⁻¹⟩`, whose value and gradient at `X^k` are `−⟨G, X^k⟩`
//! and `G`. A candidate without an inverse (a zero coupling tensor) is
//! valued on the tangent of that term instead. Rotated candidates are never
//! inverted: `⟨M, N S Nᵀ⟩ = ⟨Nᵀ M N, S⟩`.

use rayon::prelude::*;

use crate::adjoint::ElementSensitivity;
use crate::catalogue::MaterialPoint;
use crate::error::Result;
use crate::sgp::filter::DensityFilter;
use crate::sgp::space::{
    harmonic_fit_weights, CandidateKey, DesignSpace, DesignState, Harmonics, TypeCandidates,
    HARMONICS,
};
use crate::tensors::{spd_inverse, spd_inverse3, Frobenius, Mat3, Mat6, SymMatrix3, SymTensor4};

/// Reciprocal term of a 3×3 tensor with tangent fallback.
#[derive(Clone, Debug)]
struct Term3 {
    g: Mat3,
    /// `X^k G X^k` when `X^k` is invertible.
    m: Option<Mat3>,
    /// `−2⟨G, X^k⟩`, the tangent's constant.
    offset: f64,
}

impl Term3 {
    fn new(x: &SymMatrix3, g: &SymMatrix3) -> Self {
        let gm = g.to_matrix();
        let xm = x.to_matrix();
        let invertible = !x.is_zero() && spd_inverse3(x).is_ok();
        Self {
            g: gm,
            m: invertible.then(|| xm * gm * xm),
            offset: -2.0 * xm.frobenius(&gm),
        }
    }

    fn value(&self, x: &SymMatrix3, inv: Option<&SymMatrix3>) -> f64 {
        match (&self.m, inv) {
            (Some(m), Some(s)) => -m.frobenius(&s.to_matrix()),
            (Some(_), None) => self.g.frobenius(&x.to_matrix()) + self.offset,
            (None, _) => self.g.frobenius(&x.to_matrix()),
        }
    }
}

/// Model data of one element.
#[derive(Clone, Debug)]
pub struct ElementModel {
    m_a: Mat6,
    a_k: Mat6,
    a_k_norm_sq: f64,
    b: Term3,
    k: Term3,
    label_k: [f64; 3],
    /// Regularization coefficients: `b_ℓ d + a d²` with `d = R_ℓ − R^k_ℓ`.
    reg_a: f64,
    reg_b: [f64; 3],
    /// Model value at the expansion point.
    base: f64,
}

impl ElementModel {
    fn physical(
        &self,
        p: &MaterialPoint,
        inv_a: &SymTensor4,
        inv_b: Option<&SymMatrix3>,
        inv_k: Option<&SymMatrix3>,
    ) -> f64 {
        -self.m_a.frobenius(&inv_a.to_matrix())
            + self.b.value(&p.b, inv_b)
            + self.k.value(&p.k, inv_k)
    }

    fn regularization(&self, label: &[f64; 3]) -> f64 {
        (0..3)
            .map(|l| {
                let d = label[l] - self.label_k[l];
                self.reg_b[l] * d + self.reg_a * d * d
            })
            .sum()
    }
}

/// One scan result: the best angle of a grid point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanEntry {
    pub value: f64,
    pub rho: f64,
    pub key: CandidateKey,
}

/// Separable model `J(H^k) + Σ_e (v_e(H_e) − v_e(H^k_e))` where `v_e`
/// holds the physical, globalization and regularization terms. The volume
/// term `λ_ρ ρ_e` is added by the subproblem.
#[derive(Clone, Debug)]
pub struct SeparableModel {
    pub elements: Vec<ElementModel>,
    /// Merit at the expansion point.
    pub j_k: f64,
    pub lambda_xi: f64,
    pub lambda_g: f64,
}

fn pack6(m: &Mat6) -> [f64; 21] {
    let mut w = [0.0; 21];
    let mut k = 0;
    for i in 0..6 {
        for j in i..6 {
            w[k] = if i == j {
                m[(i, i)]
            } else {
                m[(i, j)] + m[(j, i)]
            };
            k += 1;
        }
    }
    w
}

fn pack3(m: &Mat3) -> [f64; 6] {
    let mut w = [0.0; 6];
    let mut k = 0;
    for i in 0..3 {
        for j in i..3 {
            w[k] = if i == j {
                m[(i, i)]
            } else {
                m[(i, j)] + m[(j, i)]
            };
            k += 1;
        }
    }
    w
}

/// Rotated 3×3 term coefficients for one angle.
struct Term3Scan {
    wm: Option<[f64; 6]>,
    wg: [f64; 6],
    offset: f64,
}

impl Term3Scan {
    fn new(t: &Term3, r: &Mat3) -> Self {
        Self {
            wm: t.m.as_ref().map(|m| pack3(&(r.transpose() * m * r))),
            wg: pack3(&(r.transpose() * t.g * r)),
            offset: t.offset,
        }
    }

    /// Harmonic coefficient `h` from per-sample coefficients.
    fn fit(samples: &[Term3Scan], w: &[f64; HARMONICS], h: usize) -> Self {
        let comb = |f: &dyn Fn(&Term3Scan) -> [f64; 6]| -> [f64; 6] {
            std::array::from_fn(|c| samples.iter().zip(w).map(|(t, ws)| ws * f(t)[c]).sum())
        };
        Self {
            wm: samples[0]
                .wm
                .is_some()
                .then(|| comb(&|t| t.wm.expect("uniform across samples"))),
            wg: comb(&|t| t.wg),
            offset: if h == 0 { samples[0].offset } else { 0.0 },
        }
    }

    /// Adds the term for every grid point to `v`, using `tmp` as scratch.
    fn accumulate(
        &self,
        x: &[Vec<f64>],
        inv: &[Vec<f64>],
        has_inv: &[f64],
        v: &mut [f64],
        tmp: &mut [f64],
    ) {
        let all_inv = has_inv.iter().all(|&h| h == 1.0);
        match &self.wm {
            Some(wm) if all_inv => {
                let neg: [f64; 6] = std::array::from_fn(|c| -wm[c]);
                axpy_columns(&neg, inv, v);
            }
            Some(wm) => {
                // reciprocal where invertible, tangent elsewhere
                tmp.fill(self.offset);
                axpy_columns(&self.wg, x, tmp);
                for (t, h) in tmp.iter_mut().zip(has_inv) {
                    *t *= 1.0 - h;
                }
                let neg: [f64; 6] = std::array::from_fn(|c| -wm[c]);
                axpy_columns(&neg, inv, tmp);
                for (vi, t) in v.iter_mut().zip(tmp.iter()) {
                    *vi += t;
                }
            }
            None => axpy_columns(&self.wg, x, v),
        }
    }
}

/// `v += Σ_c w_c · cols_c`.
#[inline]
fn axpy_columns<const N: usize>(w: &[f64; N], cols: &[Vec<f64>], v: &mut [f64]) {
    for (wc, col) in w.iter().zip(cols) {
        if *wc == 0.0 {
            continue;
        }
        for (vi, x) in v.iter_mut().zip(col) {
            *vi += wc * x;
        }
    }
}

impl SeparableModel {
    /// Builds the model at `design` with sensitivities `sens` and merit
    /// value `j_k`. `Λ_g` starts at zero.
    pub fn build(
        design: &DesignState,
        sens: &[ElementSensitivity],
        filter: &DensityFilter,
        lambda_xi: f64,
        j_k: f64,
    ) -> Result<Self> {
        assert_eq!(design.len(), sens.len());
        assert_eq!(design.len(), filter.len());
        let labels = design.labels();
        let comps: Vec<Vec<f64>> = (0..3)
            .map(|l| labels.iter().map(|x| x[l]).collect())
            .collect();
        let residuals: Vec<Vec<f64>> = comps.iter().map(|c| filter.residual(c)).collect();
        let elements = design
            .elements
            .par_iter()
            .zip(sens.par_iter())
            .enumerate()
            .map(|(e, (d, s))| {
                let p = &d.point;
                let a_k = p.a.to_matrix();
                let mut reg_a = 0.0;
                let mut reg_b = [0.0; 3];
                for l in 0..3 {
                    let (a, b) = filter.single_entry_quadratic(e, &comps[l], &residuals[l]);
                    reg_a = a;
                    reg_b[l] = b;
                }
                let mut em = ElementModel {
                    m_a: a_k * s.a.to_matrix() * a_k,
                    a_k,
                    a_k_norm_sq: a_k.norm_squared(),
                    b: Term3::new(&p.b, &s.b),
                    k: Term3::new(&p.k, &s.k),
                    label_k: p.label,
                    reg_a,
                    reg_b,
                    base: 0.0,
                };
                let inv_a = spd_inverse(&p.a)?;
                let inv_b = if em.b.m.is_some() {
                    spd_inverse3(&p.b).ok()
                } else {
                    None
                };
                let inv_k = if em.k.m.is_some() {
                    spd_inverse3(&p.k).ok()
                } else {
                    None
                };
                em.base = em.physical(p, &inv_a, inv_b.as_ref(), inv_k.as_ref());
                Ok(em)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            elements,
            j_k,
            lambda_xi,
            lambda_g: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Constant making the model exact at the expansion point.
    pub fn c_phys(&self) -> f64 {
        self.j_k - self.elements.iter().map(|e| e.base).sum::<f64>()
    }

    /// `v_e` at an arbitrary material, inverses computed here.
    pub fn element_value(&self, e: usize, p: &MaterialPoint) -> Result<f64> {
        let em = &self.elements[e];
        let inv_a = spd_inverse(&p.a)?;
        let inv_b = if p.b.is_zero() {
            None
        } else {
            spd_inverse3(&p.b).ok()
        };
        let inv_k = if p.k.is_zero() {
            None
        } else {
            spd_inverse3(&p.k).ok()
        };
        let d = p.a.to_matrix() - em.a_k;
        Ok(em.physical(p, &inv_a, inv_b.as_ref(), inv_k.as_ref())
            + 0.5 * self.lambda_g * d.norm_squared()
            + self.lambda_xi * em.regularization(&p.label))
    }

    /// `v_e(H_e) − v_e(H^k_e)`.
    pub fn element_change(&self, e: usize, p: &MaterialPoint) -> Result<f64> {
        Ok(self.element_value(e, p)? - self.elements[e].base)
    }

    /// Model value of a full design.
    pub fn value(&self, design: &DesignState) -> Result<f64> {
        let mut s = self.j_k;
        for (e, d) in design.elements.iter().enumerate() {
            s += self.element_change(e, &d.point)?;
        }
        Ok(s)
    }

    /// Regularization of component `l` as `a R² + b R + c` in the label of
    /// element `e` with all other labels frozen; `c` includes the value at
    /// the expansion point `xi_l`.
    pub fn reg_quadratic(&self, e: usize, l: usize, xi_l: f64) -> (f64, f64, f64) {
        let em = &self.elements[e];
        let (a, b, x) = (em.reg_a, em.reg_b[l], em.label_k[l]);
        (a, b - 2.0 * a * x, xi_l - b * x + a * x * x)
    }

    /// Best angle per grid point of every type for element `e`. Ties go to
    /// the lowest angle index.
    pub fn scan_element(&self, e: usize, space: &DesignSpace) -> Vec<ScanEntry> {
        let mut out = Vec::with_capacity(space.types.iter().map(|t| t.points.len()).sum());
        for (slot, tc) in space.types.iter().enumerate() {
            self.scan_type(e, slot, tc, &mut out);
        }
        out
    }

    fn scan_type(&self, e: usize, slot: usize, tc: &TypeCandidates, out: &mut Vec<ScanEntry>) {
        if let Some(hm) = &tc.harmonics {
            return self.scan_type_harmonic(e, slot, tc, hm, out);
        }
        let em = &self.elements[e];
        let ng = tc.points.len();
        let lg = self.lambda_g;
        let lx = self.lambda_xi;
        let cols = &tc.cols;
        let mut best_v = vec![f64::INFINITY; ng];
        let mut best_j = vec![0usize; ng];
        let mut v = vec![0.0; ng];
        let mut tmp = vec![0.0; ng];
        for (j, op) in tc.angles.iter().enumerate() {
            let wa = pack6(&(op.n.transpose() * em.m_a * op.n));
            let neg: [f64; 21] = std::array::from_fn(|c| -wa[c]);
            v.fill(0.0);
            axpy_columns(&neg, &cols.inv_a, &mut v);
            Term3Scan::new(&em.b, &op.r).accumulate(
                &cols.b,
                &cols.inv_b,
                &cols.has_inv_b,
                &mut v,
                &mut tmp,
            );
            Term3Scan::new(&em.k, &op.r).accumulate(
                &cols.k,
                &cols.inv_k,
                &cols.has_inv_k,
                &mut v,
                &mut tmp,
            );
            if lg != 0.0 {
                // ½Λ_g (‖A‖² − 2⟨A, A^k⟩ + ‖A^k‖²) with ⟨Q A₀ Qᵀ, A^k⟩ = ⟨A₀, Qᵀ A^k Q⟩
                let wg = pack6(&(op.q.transpose() * em.a_k * op.q));
                let scaled: [f64; 21] = std::array::from_fn(|c| -lg * wg[c]);
                let c0 = 0.5 * lg * em.a_k_norm_sq;
                for (vi, n2) in v.iter_mut().zip(&cols.norm_sq[j]) {
                    *vi += 0.5 * lg * n2 + c0;
                }
                axpy_columns(&scaled, &cols.a, &mut v);
            }
            if lx != 0.0 {
                for l in 0..3 {
                    let (a, b, x0) = (lx * em.reg_a, lx * em.reg_b[l], em.label_k[l]);
                    for (vi, r) in v.iter_mut().zip(&cols.labels[l][j]) {
                        let d = r - x0;
                        *vi += d * (b + a * d);
                    }
                }
            }
            for g in 0..ng {
                if v[g] < best_v[g] {
                    best_v[g] = v[g];
                    best_j[g] = j;
                }
            }
        }
        for g in 0..ng {
            out.push(ScanEntry {
                value: best_v[g] - em.base,
                rho: tc.points[g].point.rho,
                key: CandidateKey {
                    slot,
                    grid: g,
                    angle: best_j[g],
                },
            });
        }
    }

    /// Same as the direct scan, with every angle-dependent term except
    /// `‖A‖²` expanded in harmonics once per grid point.
    fn scan_type_harmonic(
        &self,
        e: usize,
        slot: usize,
        tc: &TypeCandidates,
        hm: &Harmonics,
        out: &mut Vec<ScanEntry>,
    ) {
        let em = &self.elements[e];
        let ng = tc.points.len();
        let lg = self.lambda_g;
        let lx = self.lambda_xi;
        let cols = &tc.cols;
        let fit = harmonic_fit_weights();
        let combine = |samples: &[[f64; 21]], h: usize, scale: f64| -> [f64; 21] {
            std::array::from_fn(|c| {
                scale
                    * samples
                        .iter()
                        .zip(&fit[h])
                        .map(|(x, w)| w * x[c])
                        .sum::<f64>()
            })
        };
        let mut coef = vec![vec![0.0; ng]; HARMONICS];
        let mut tmp = vec![0.0; ng];
        let wa: Vec<[f64; 21]> = hm
            .samples
            .iter()
            .map(|op| pack6(&(op.n.transpose() * em.m_a * op.n)))
            .collect();
        let tb: Vec<Term3Scan> = hm
            .samples
            .iter()
            .map(|op| Term3Scan::new(&em.b, &op.r))
            .collect();
        let tk: Vec<Term3Scan> = hm
            .samples
            .iter()
            .map(|op| Term3Scan::new(&em.k, &op.r))
            .collect();
        let wg: Vec<[f64; 21]> = if lg != 0.0 {
            hm.samples
                .iter()
                .map(|op| pack6(&(op.q.transpose() * em.a_k * op.q)))
                .collect()
        } else {
            Vec::new()
        };
        for (h, c) in coef.iter_mut().enumerate() {
            axpy_columns(&combine(&wa, h, -1.0), &cols.inv_a, c);
            Term3Scan::fit(&tb, &fit[h], h).accumulate(
                &cols.b,
                &cols.inv_b,
                &cols.has_inv_b,
                c,
                &mut tmp,
            );
            Term3Scan::fit(&tk, &fit[h], h).accumulate(
                &cols.k,
                &cols.inv_k,
                &cols.has_inv_k,
                c,
                &mut tmp,
            );
            if lg != 0.0 {
                axpy_columns(&combine(&wg, h, -lg), &cols.a, c);
            }
        }
        if lg != 0.0 {
            let c0 = 0.5 * lg * em.a_k_norm_sq;
            coef[0].iter_mut().for_each(|v| *v += c0);
        }
        if lx != 0.0 {
            for g in 0..ng {
                let r: [f64; HARMONICS] = std::array::from_fn(|s| {
                    (0..3)
                        .map(|l| {
                            let d = hm.labels[l][s][g] - em.label_k[l];
                            lx * d * (em.reg_b[l] + em.reg_a * d)
                        })
                        .sum()
                });
                for (h, c) in coef.iter_mut().enumerate() {
                    c[g] += fit[h].iter().zip(&r).map(|(w, x)| w * x).sum::<f64>();
                }
            }
        }
        let mut best_v = vec![f64::INFINITY; ng];
        let mut best_j = vec![0usize; ng];
        let mut v = vec![0.0; ng];
        for (j, basis) in hm.basis.iter().enumerate() {
            if lg != 0.0 {
                for (vi, n2) in v.iter_mut().zip(&cols.norm_sq[j]) {
                    *vi = 0.5 * lg * n2;
                }
            } else {
                v.fill(0.0);
            }
            for (bh, c) in basis.iter().zip(&coef) {
                for (vi, x) in v.iter_mut().zip(c) {
                    *vi += bh * x;
                }
            }
            for g in 0..ng {
                if v[g] < best_v[g] {
                    best_v[g] = v[g];
                    best_j[g] = j;
                }
            }
        }
        for g in 0..ng {
            out.push(ScanEntry {
                value: best_v[g] - em.base,
                rho: tc.points[g].point.rho,
                key: CandidateKey {
                    slot,
                    grid: g,
                    angle: best_j[g],
                },
            });
        }
    }

    /// Scans all elements in parallel.
    pub fn scan(&self, space: &DesignSpace) -> Vec<Vec<ScanEntry>> {
        (0..self.len())
            .into_par_iter()
            .map(|e| self.scan_element(e, space))
            .collect()
    }
}
