//! Cone-weighted density filter over element centroids and the label
//! regularization built on it.

use crate::macrofem::MacroMesh;

/// Row-stochastic sparse filter `F`, stored by rows and by columns.
#[derive(Clone, Debug)]
pub struct DensityFilter {
    rows: Vec<Vec<(usize, f64)>>,
    cols: Vec<Vec<(usize, f64)>>,
}

impl DensityFilter {
    /// Weights `max(0, radius − dist)` between centroids, normalized per
    /// row. Every row contains its own element.
    pub fn new(mesh: &MacroMesh, radius: f64) -> Self {
        let centroids: Vec<[f64; 3]> = (0..mesh.num_elements())
            .map(|e| mesh.element_centroid(e))
            .collect();
        Self::from_points(&centroids, radius)
    }

    pub fn from_points(centroids: &[[f64; 3]], radius: f64) -> Self {
        assert!(radius > 0.0, "filter radius must be positive");
        let n = centroids.len();
        let mut rows = Vec::with_capacity(n);
        for ci in centroids {
            let mut row: Vec<(usize, f64)> = centroids
                .iter()
                .enumerate()
                .filter_map(|(j, cj)| {
                    let d = ((ci[0] - cj[0]).powi(2)
                        + (ci[1] - cj[1]).powi(2)
                        + (ci[2] - cj[2]).powi(2))
                    .sqrt();
                    (d < radius).then_some((j, radius - d))
                })
                .collect();
            let s: f64 = row.iter().map(|&(_, w)| w).sum();
            row.iter_mut().for_each(|(_, w)| *w /= s);
            rows.push(row);
        }
        let mut cols = vec![Vec::new(); n];
        for (i, row) in rows.iter().enumerate() {
            for &(j, w) in row {
                cols[j].push((i, w));
            }
        }
        Self { rows, cols }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, w)| w * x[j]).sum())
            .collect()
    }

    /// Residual `x − F x`, summed as `Σ_j w_ij (x_i − x_j)` so that it
    /// vanishes exactly on constant fields.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .zip(x)
            .map(|(row, &xi)| row.iter().map(|&(j, w)| w * (xi - x[j])).sum())
            .collect()
    }

    /// `Ξ = ½ Σ_ℓ ‖R_ℓ − F R_ℓ‖²` for per-element labels.
    pub fn regularization(&self, labels: &[[f64; 3]]) -> f64 {
        (0..3)
            .map(|l| {
                let r: Vec<f64> = labels.iter().map(|x| x[l]).collect();
                0.5 * self.residual(&r).iter().map(|v| v * v).sum::<f64>()
            })
            .sum()
    }

    /// Coefficients of `½‖r(R)‖²` with only entry `e` of `x` replaced by
    /// `R`: the value is `c + b (R − x_e) + a (R − x_e)²` with `c` the value
    /// at `x`. Returns `(a, b)`.
    pub fn single_entry_quadratic(&self, e: usize, x: &[f64], residual: &[f64]) -> (f64, f64) {
        debug_assert_eq!(residual.len(), x.len());
        // column e of (I − F)
        let mut a = 0.0;
        let mut b = 0.0;
        let mut diag = 1.0;
        for &(i, w) in &self.cols[e] {
            if i == e {
                diag -= w;
            } else {
                a += w * w;
                b -= w * residual[i];
            }
        }
        a += diag * diag;
        b += diag * residual[e];
        (0.5 * a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::macrofem::MeshSpec;
    use proptest::prelude::*;

    fn mesh(nx: usize, ny: usize, nz: usize) -> MacroMesh {
        MacroMesh::new(MeshSpec {
            nx,
            ny,
            nz,
            h: [1.0; 3],
        })
        .unwrap()
    }

    #[test]
    fn rows_sum_to_one_and_constants_are_fixed() {
        let f = DensityFilter::new(&mesh(15, 10, 2), 1.3);
        for i in 0..f.len() {
            let s: f64 = f.row(i).iter().map(|&(_, w)| w).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let c = vec![0.37; f.len()];
        assert!(f.apply(&c).iter().all(|v| (v - 0.37).abs() < 1e-15));
        assert_eq!(f.regularization(&vec![[0.2, -1.0, 0.5]; f.len()]), 0.0);
    }

    #[test]
    fn spike_spreads_and_shrinks() {
        let f = DensityFilter::new(&mesh(5, 5, 1), 1.3);
        let mut x = vec![0.0; 25];
        x[12] = 1.0;
        let y = f.apply(&x);
        assert!(y[12] < 1.0 && y[12] > 0.0);
        assert!(y[11] > 0.0 && y[7] > 0.0);
        // interior rows have identical weights, so mass is preserved
        assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_element_hand_value() {
        // centroids one apart, radius 1.3: weights 1.3 and 0.3, rows (13/16, 3/16)
        let f = DensityFilter::new(&mesh(2, 1, 1), 1.3);
        let w_self = 1.3 / 1.6;
        let w_other = 0.3 / 1.6;
        assert!((f.row(0).iter().find(|p| p.0 == 0).unwrap().1 - w_self).abs() < 1e-15);
        // labels 0 and 1 in one component: residuals (−w_other, w_other)
        let xi = f.regularization(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert!((xi - w_other * w_other).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn single_entry_quadratic_is_exact(
            x in proptest::collection::vec(-1.0f64..1.0, 12),
            e in 0usize..12,
            r in -2.0f64..2.0,
        ) {
            let f = DensityFilter::new(&mesh(4, 3, 1), 1.3);
            let res = f.residual(&x);
            let base = 0.5 * res.iter().map(|v| v * v).sum::<f64>();
            let (a, b) = f.single_entry_quadratic(e, &x, &res);
            let mut y = x.clone();
            y[e] = r;
            let direct = 0.5 * f.residual(&y).iter().map(|v| v * v).sum::<f64>();
            let d = r - x[e];
            prop_assert!((base + b * d + a * d * d - direct).abs() <= 1e-12 * (1.0 + direct));
        }
    }
}
