//! Tensor-product piecewise cubic Hermite interpolation with
//! monotonicity-limited slopes, in one and two parameters.

use serde::{Deserialize, Serialize};

/// Limited node slopes of samples `y` over strictly increasing `x`.
///
/// Interior slopes are the weighted harmonic mean of adjacent secants and
/// vanish at local extrema; end slopes use the shape-preserving
/// three-point formula. The resulting Hermite interpolant is monotone on
/// every interval where the data are.
pub fn limited_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    debug_assert_eq!(n, y.len());
    if n < 2 {
        return vec![0.0; n];
    }
    let h: Vec<f64> = (0..n - 1).map(|i| x[i + 1] - x[i]).collect();
    let del: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    if n == 2 {
        return vec![del[0], del[0]];
    }
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        if del[k - 1] * del[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / del[k - 1] + w2 / del[k]);
        }
    }
    d[0] = end_slope(h[0], h[1], del[0], del[1]);
    d[n - 1] = end_slope(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
    d
}

fn end_slope(h0: f64, h1: f64, del0: f64, del1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
    if d.signum() != del0.signum() || del0 == 0.0 {
        0.0
    } else if del0.signum() != del1.signum() && d.abs() > 3.0 * del0.abs() {
        3.0 * del0
    } else {
        d
    }
}

/// Index of the interval of `x` containing `t` and the local coordinate.
fn locate(x: &[f64], t: f64) -> (usize, f64, f64) {
    let n = x.len();
    let mut i = match x.binary_search_by(|v| v.total_cmp(&t)) {
        Ok(i) => i,
        Err(i) => i.saturating_sub(1),
    };
    if i >= n - 1 {
        i = n - 2;
    }
    let h = x[i + 1] - x[i];
    (i, ((t - x[i]) / h).clamp(0.0, 1.0), h)
}

/// Hermite basis `(h00, h10, h01, h11)` at local coordinate `s`.
#[inline]
fn basis(s: f64) -> [f64; 4] {
    let s2 = s * s;
    let s3 = s2 * s;
    [
        2.0 * s3 - 3.0 * s2 + 1.0,
        s3 - 2.0 * s2 + s,
        -2.0 * s3 + 3.0 * s2,
        s3 - s2,
    ]
}

/// Interpolant of several scalar fields over one parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hermite1 {
    x: Vec<f64>,
    /// `values[f][i]`, `slopes[f][i]`.
    values: Vec<Vec<f64>>,
    slopes: Vec<Vec<f64>>,
}

impl Hermite1 {
    pub fn new(x: Vec<f64>, values: Vec<Vec<f64>>) -> Self {
        let slopes = values.iter().map(|v| limited_slopes(&x, v)).collect();
        Self { x, values, slopes }
    }

    pub fn fields(&self) -> usize {
        self.values.len()
    }

    pub fn eval(&self, t: f64, out: &mut [f64]) {
        let (i, s, h) = locate(&self.x, t);
        if s == 0.0 {
            for (f, o) in out.iter_mut().enumerate() {
                *o = self.values[f][i];
            }
            return;
        }
        let b = basis(s);
        for (f, o) in out.iter_mut().enumerate() {
            let v = &self.values[f];
            let d = &self.slopes[f];
            *o = b[0] * v[i] + b[1] * h * d[i] + b[2] * v[i + 1] + b[3] * h * d[i + 1];
        }
    }
}

/// Interpolant of several scalar fields over a rectangular node grid.
/// Values are stored with the first parameter varying fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hermite2 {
    x: Vec<f64>,
    y: Vec<f64>,
    values: Vec<Vec<f64>>,
    dx: Vec<Vec<f64>>,
    dy: Vec<Vec<f64>>,
    dxy: Vec<Vec<f64>>,
}

impl Hermite2 {
    pub fn new(x: Vec<f64>, y: Vec<f64>, values: Vec<Vec<f64>>) -> Self {
        let (nx, ny) = (x.len(), y.len());
        let mut dx = Vec::with_capacity(values.len());
        let mut dy = Vec::with_capacity(values.len());
        let mut dxy = Vec::with_capacity(values.len());
        for v in &values {
            let mut fx = vec![0.0; nx * ny];
            let mut fy = vec![0.0; nx * ny];
            let mut fxy = vec![0.0; nx * ny];
            for j in 0..ny {
                let row: Vec<f64> = (0..nx).map(|i| v[i + nx * j]).collect();
                for (i, d) in limited_slopes(&x, &row).into_iter().enumerate() {
                    fx[i + nx * j] = d;
                }
            }
            for i in 0..nx {
                let col: Vec<f64> = (0..ny).map(|j| v[i + nx * j]).collect();
                for (j, d) in limited_slopes(&y, &col).into_iter().enumerate() {
                    fy[i + nx * j] = d;
                }
                let colx: Vec<f64> = (0..ny).map(|j| fx[i + nx * j]).collect();
                for (j, d) in limited_slopes(&y, &colx).into_iter().enumerate() {
                    fxy[i + nx * j] = d;
                }
            }
            dx.push(fx);
            dy.push(fy);
            dxy.push(fxy);
        }
        Self {
            x,
            y,
            values,
            dx,
            dy,
            dxy,
        }
    }

    pub fn fields(&self) -> usize {
        self.values.len()
    }

    pub fn eval(&self, t: [f64; 2], out: &mut [f64]) {
        let nx = self.x.len();
        let (i, s, hx) = locate(&self.x, t[0]);
        let (j, u, hy) = locate(&self.y, t[1]);
        if s == 0.0 && u == 0.0 {
            for (f, o) in out.iter_mut().enumerate() {
                *o = self.values[f][i + nx * j];
            }
            return;
        }
        let bx = basis(s);
        let by = basis(u);
        // corner order (i,j), (i+1,j), (i,j+1), (i+1,j+1)
        let corners = [
            (i, j, 0, 0),
            (i + 1, j, 2, 0),
            (i, j + 1, 0, 2),
            (i + 1, j + 1, 2, 2),
        ];
        for (f, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for &(ci, cj, ox, oy) in &corners {
                let k = ci + nx * cj;
                acc += bx[ox] * by[oy] * self.values[f][k]
                    + bx[ox + 1] * hx * by[oy] * self.dx[f][k]
                    + bx[ox] * by[oy + 1] * hy * self.dy[f][k]
                    + bx[ox + 1] * hx * by[oy + 1] * hy * self.dxy[f][k];
            }
            *o = acc;
        }
    }
}
